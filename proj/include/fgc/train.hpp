#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "json.hpp"

#include "fgc/autodiff.hpp"
#include "fgc/channel.hpp"
#include "fgc/cluster.hpp"
#include "fgc/cluster_model.hpp"
#include "fgc/spa.hpp"

namespace fgc {

enum class LossKind { SoftBer, CrossEntropy };

struct TrainConfig {
  ChannelSpec channel = ChannelSpec::reference();
  int block_length = 64;        // K
  int batch_size = 100;         // D
  int steps = 2000;
  double learning_rate = 1e-4;
  double train_esn0_db = 10.0;
  int iterations = 10;          // SPA iterations during training
  int degree = 4;               // d_max of the containers
  int span_limit = -1;          // -1: L + 1
  bool nbp = false;
  LossKind loss = LossKind::SoftBer;
  std::uint64_t seed = 1;
};

nlohmann::json config_to_json(const TrainConfig& config);
/// Fields absent from doc keep the values in `base`.
TrainConfig config_from_json(const nlohmann::json& doc, TrainConfig base = {});

/// Sum over sequences and symbols of the estimated error probability
/// m^((1-x)/2) (1-m)^((1+x)/2). Throws if some m lies outside [0, 1].
double soft_ber(std::span<const std::vector<double>> marginals, std::span<const SymbolBlock> symbols);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int step = 0;
  std::vector<double> first_moment;
  std::vector<double> second_moment;

  explicit AdamState(std::size_t num_params = 0) : first_moment(num_params, 0.0), second_moment(num_params, 0.0) {}
};

/// Bias-corrected Adam update; entries with frozen[i] != 0 are left alone.
/// Throws std::runtime_error on a non-finite gradient.
void adam_step(AdamState& state, std::span<double> params, std::span<const double> gradient,
               std::span<const std::uint8_t> frozen, double learning_rate);

/// Records the loss of one sequence through the clustered graph: container
/// tables from alpha_vars, flooding SPA (NBP if nbp_vars is non-empty), and
/// soft BER or cross-entropy against the transmitted symbols.
ad::Var record_sequence_loss(ad::Tape& tape, const ClusterPlan& plan, const SpaTopology& topology,
                             const FactorGraph& bfg, std::span<const ad::Var> alpha_vars,
                             std::span<const std::uint8_t> active, std::span<const ad::Var> nbp_vars,
                             const SymbolBlock& x, int iterations, LossKind loss);

struct SequenceGradient {
  double loss = 0.0;
  std::vector<double> alpha;  // per flat slot
  std::vector<double> nbp;
};

/// Value and gradient of record_sequence_loss computed with the hand-derived
/// reverse pass of the SPA instead of a tape. alpha is indexed by slot;
/// entries with active[slot] == 0 are left out of the tables.
SequenceGradient sequence_loss_gradient(const ClusterPlan& plan, const SpaTopology& topology, const FactorGraph& bfg,
                                        std::span<const double> alpha, std::span<const std::uint8_t> active,
                                        std::span<const double> nbp, const SymbolBlock& x, int iterations,
                                        LossKind loss);

struct BatchGradient {
  double loss = 0.0;
  std::vector<double> beta;  // per flat slot; zero for masked
  std::vector<double> nbp;   // empty unless NBP is trained
};

struct TrainState {
  ClusterModel model;
  AdamState adam;
  std::vector<double> loss_history;  // loss of the minibatch drawn at each step
};

/// Model with N(0,1) logits drawn from the config seed, unit NBP weights and
/// zeroed optimizer moments.
TrainState initial_state(const TrainConfig& config);

/// Continuous-clustering trainer over the UFG.
class Trainer {
 public:
  explicit Trainer(TrainConfig config);
  Trainer(TrainConfig config, TrainState state);

  /// Minibatch of step `step_index`; sequences run across OpenMP threads and
  /// are accumulated in sequence order.
  BatchGradient batch_gradient(int step_index) const;
  /// Single-threaded reference for batch_gradient.
  BatchGradient batch_gradient_serial(int step_index) const;

  /// One Adam step; returns the minibatch loss before the update.
  double step();
  void run(int steps, const std::function<void(int, double)>& on_step = {});

  const TrainState& state() const { return state_; }
  const TrainConfig& config() const { return config_; }
  const ClusterPlan& plan() const { return plan_; }

  /// Flat parameters: beta slots then NBP weights.
  std::vector<double> parameters() const;

  /// Loss of a fixed set of sequences under the current parameters (no update).
  double evaluate_loss(std::uint64_t seed, int num_sequences) const;

 private:
  BatchGradient batch_gradient_impl(int step_index, bool parallel, std::uint64_t seed, int num_sequences) const;
  void set_parameters(std::span<const double> params);

  TrainConfig config_;
  TrainState state_;
  FactorGraph structure_;
  ClusterPlan plan_;
  SpaTopology topology_;
};

nlohmann::json checkpoint_to_json(const Trainer& trainer);
Trainer trainer_from_checkpoint(const nlohmann::json& doc);
void write_loss_csv(std::span<const double> history, const std::filesystem::path& path);

}  // namespace fgc
