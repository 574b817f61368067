#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "json.hpp"

#include "fgc/channel.hpp"

namespace fgc {

// Configuration indexing for a factor with neighbors v_0 < v_1 < ... < v_{d-1}:
// bit b of the table index holds the value of v_b, with bit 0 meaning +1 and
// bit 1 meaning -1.

inline Symbol config_value(std::size_t index, int position) {
  return ((index >> position) & 1u) ? Symbol{-1} : Symbol{1};
}

inline std::size_t config_index(std::span<const Symbol> neighbor_values) {
  std::size_t index = 0;
  for (std::size_t b = 0; b < neighbor_values.size(); ++b)
    if (neighbor_values[b] < 0) index |= std::size_t{1} << b;
  return index;
}

/// Factor node with its natural-log local function.
struct LocalFunction {
  std::vector<int> neighbors;     // ascending VN ids
  std::vector<double> log_values; // 2^degree entries

  int degree() const { return static_cast<int>(neighbors.size()); }
  bool operator==(const LocalFunction&) const = default;
};

/// Bipartite graph of binary variables 0..num_variables-1 and factors.
/// Immutable after construction.
class FactorGraph {
 public:
  FactorGraph() = default;
  /// Validates neighbor ids, ordering and table sizes; throws std::invalid_argument.
  FactorGraph(int num_variables, std::vector<LocalFunction> factors);

  int num_variables() const { return num_variables_; }
  int num_factors() const { return static_cast<int>(factors_.size()); }
  const std::vector<LocalFunction>& factors() const { return factors_; }
  const LocalFunction& factor(int i) const { return factors_[static_cast<std::size_t>(i)]; }
  int max_degree() const;
  std::size_t num_edges() const;

  bool operator==(const FactorGraph&) const = default;

 private:
  int num_variables_ = 0;
  std::vector<LocalFunction> factors_;
};

/// Tap autocorrelation q_l = sum_i h_i h_{i+l}, l = 0..L, h zero-padded.
/// Requires K >= L+1.
std::vector<double> compute_q(const ChannelSpec& channel, int block_length);

/// z_k = sum_l h_l y_[(k + l) mod K].
std::vector<double> matched_filter(const ChannelSpec& channel, const ObservationBlock& y);

/// Ungerboeck-based graph: K unary factors F_k followed by K*L pairwise
/// factors I_{l,k} on (x_k, x_[k+l]), ordered k-major then l = 1..L.
/// For K < 2L+1 some variable pairs carry two factors (lags l and K-l); their
/// sum reproduces the cyclic autocorrelation.
FactorGraph build_ufg(const ChannelSpec& channel, const ObservationBlock& y);

/// Forney-based graph: one factor g_k on x_[k-L] .. x_k per k.
FactorGraph build_ffg(const ChannelSpec& channel, const ObservationBlock& y);

/// Sum over factors of the log table entry selected by x.
double global_log_function(const FactorGraph& graph, std::span<const Symbol> x);

/// Number of factors per degree.
std::map<int, int> fn_degree_histogram(const FactorGraph& graph);

nlohmann::json graph_to_json(const FactorGraph& graph);
FactorGraph graph_from_json(const nlohmann::json& doc);

}  // namespace fgc
