#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fgc/channel.hpp"
#include "fgc/cluster_model.hpp"
#include "fgc/factor_graph.hpp"

namespace fgc {

inline constexpr int kMaxBruteForceLength = 20;

/// Exact P(x_k = +1 | y) by enumerating all 2^K sequences of the FFG
/// posterior. K <= 20.
std::vector<double> map_marginals_bruteforce(const ChannelSpec& channel, const ObservationBlock& y);

/// A symbol detector producing per-symbol marginals from an observation.
/// Copies share immutable state and may be used from several threads.
class Detector {
 public:
  static Detector ufg(ChannelSpec channel, int iterations);
  static Detector ffg(ChannelSpec channel, int iterations);
  /// Clustered graph of a model, simplified by the support of its unmasked
  /// components. With use_nbp the model's NBP weights are applied and
  /// iterations must equal their iteration count.
  static Detector clustered(ClusterModel model, int iterations, bool use_nbp = false);
  static Detector map_bruteforce(ChannelSpec channel);

  std::vector<double> marginals(const ObservationBlock& y) const;
  const ChannelSpec& channel() const;
  const std::string& name() const;

  struct Impl;

 private:
  explicit Detector(std::shared_ptr<const Impl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<const Impl> impl_;
};

/// Factor graph a clustered detector runs on for observation y, with the NBP
/// weights remapped onto its edges (empty when NBP is off).
struct ClusteredInstance {
  SimplifiedGraph simplified;
  NbpWeights weights;
};
ClusteredInstance clustered_instance(const ClusterModel& model, const ObservationBlock& y, bool use_nbp);

struct StopRule {
  std::uint64_t min_errors = 100;
  std::uint64_t max_bits = 10'000'000;
  int blocks_per_round = 64;
};

struct SweepConfig {
  int block_length = 64;
  StopRule stop;
  std::uint64_t seed = 1;
};

struct BerRecord {
  double esn0_db = 0.0;
  std::uint64_t bits = 0;
  std::uint64_t errors = 0;
  double ber = 0.0;
  double ci95 = 0.0;  // half-width, normal approximation
};

/// Monte-Carlo BER per Es/N0. Block b at point p draws from stream
/// (seed, p << 40 | b); blocks are evaluated in rounds of blocks_per_round
/// until the error target or the bit budget is reached.
std::vector<BerRecord> ber_sweep(const Detector& detector, std::span<const double> esn0_db,
                                 const SweepConfig& config);
/// Single-threaded reference for ber_sweep; produces identical records.
std::vector<BerRecord> ber_sweep_serial(const Detector& detector, std::span<const double> esn0_db,
                                        const SweepConfig& config);

double ber_ci95(std::uint64_t errors, std::uint64_t bits);
/// Gaussian tail probability.
double q_function(double x);

/// "a:step:b" (inclusive) or a comma-separated list.
std::vector<double> parse_esn0_list(const std::string& text);

void write_ber_csv(std::span<const BerRecord> records, const std::filesystem::path& path);
std::string ber_csv(std::span<const BerRecord> records);

struct ModelAnalysis {
  std::vector<double> relevances;           // per container
  std::vector<int> histogram;               // relevance counts per bin over [0, 1]
  std::map<int, int> degree_counts;         // simplified degree -> containers
  int pruned_containers = 0;                // containers with no component left
  int total_containers = 0;
  double pruned_fraction() const { return total_containers ? double(pruned_containers) / total_containers : 0.0; }
};

/// Relevances and, after pruning at threshold, the degree distribution of the
/// simplified containers.
ModelAnalysis analyze_model(const ClusterModel& model, double threshold = 0.01, int bins = 20);
/// Rows bin_lo,bin_hi,count,fraction.
std::string relevance_histogram_csv(const ModelAnalysis& analysis);
/// Table of percentages per degree 1..d_max plus the pruned share.
std::string degree_table_csv(const ModelAnalysis& analysis, int max_degree);

/// Model with its logits pruned at threshold and NBP weights kept.
ClusterModel prune_model(const ClusterModel& model, double threshold);

}  // namespace fgc
