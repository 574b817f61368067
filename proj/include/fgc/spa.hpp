#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "fgc/autodiff.hpp"
#include "fgc/channel.hpp"
#include "fgc/factor_graph.hpp"

namespace fgc {

/// Message LLRs are clamped to [-kLlrClamp, kLlrClamp] after every update.
inline constexpr double kLlrClamp = 50.0;

struct SpaConfig {
  int iterations = 10;
  bool nbp_enabled = false;
};

/// Edge layout used by the message passing kernel. Edges are numbered
/// factor-major: the edges of factor f are edge_begin[f] .. edge_begin[f+1]-1,
/// in the order of its neighbor list.
struct SpaTopology {
  int num_variables = 0;
  std::vector<std::uint32_t> fn_edge_begin;
  std::vector<int> edge_variable;
  std::vector<std::uint32_t> vn_edge_begin;  // CSR over variables
  std::vector<std::uint32_t> vn_edges;       // ascending edge ids per variable

  static SpaTopology from_graph(const FactorGraph& graph);
  static SpaTopology from_neighbors(int num_variables, std::span<const std::vector<int>> neighbors);

  std::size_t num_edges() const { return edge_variable.size(); }
  std::size_t num_factors() const { return fn_edge_begin.size() - 1; }
  int fn_degree(std::size_t f) const { return static_cast<int>(fn_edge_begin[f + 1] - fn_edge_begin[f]); }
};

/// Per-edge, per-iteration multipliers on factor-to-variable LLRs.
struct NbpWeights {
  int iterations = 0;
  std::size_t num_edges = 0;
  std::vector<double> values;  // [t * num_edges + e]

  static NbpWeights ones(std::size_t num_edges, int iterations);
  bool operator==(const NbpWeights&) const = default;
  double at(int t, std::size_t e) const { return values[static_cast<std::size_t>(t) * num_edges + e]; }
  double& at(int t, std::size_t e) { return values[static_cast<std::size_t>(t) * num_edges + e]; }
};

struct MessageState {
  std::vector<double> vn_to_fn;
  std::vector<double> fn_to_vn;
};

/// Uniform messages: every LLR zero.
MessageState init_messages(const SpaTopology& topology);

/// Outgoing LLR on each edge of one factor given the incoming LLRs on all its
/// edges; output i does not depend on incoming[i].
std::vector<double> fn_update(std::span<const double> log_table, std::span<const double> incoming);

/// Output on edge e is the sum of the incoming LLRs on all other edges.
std::vector<double> vn_update(std::span<const double> incoming);

/// Estimated P(x_k = +1 | y) per variable.
std::vector<double> run_spa(const FactorGraph& graph, const SpaConfig& config,
                            const NbpWeights* weights = nullptr);

/// Sum of final incoming LLRs per variable.
std::vector<double> run_spa_llr(const FactorGraph& graph, const SpaConfig& config,
                                const NbpWeights* weights = nullptr);

/// Messages of every iteration of a double-precision flooding run, kept for
/// the reverse pass.
struct SpaTrace {
  int iterations = 0;
  std::vector<double> v2f;  // [t * num_edges + e], input to the FN update of iteration t
  std::vector<double> f2v;  // [t * num_edges + e], output of the FN update of iteration t
  std::vector<double> llr;  // final sum of incoming LLRs per variable
};

/// Same arithmetic as spa_kernel with DoubleBackend, recording all messages.
SpaTrace spa_forward(const SpaTopology& topology, std::span<const std::vector<double>> tables, int iterations,
                     std::span<const double> weights);

struct SpaAdjoint {
  std::vector<std::vector<double>> tables;  // d loss / d table entry
  std::vector<double> weights;               // d loss / d NBP weight, empty without NBP
};

/// Reverse pass of spa_forward given d loss / d llr. Hand-derived counterpart
/// of differentiating spa_kernel<TapeBackend>, clamps included.
SpaAdjoint spa_backward(const SpaTopology& topology, std::span<const std::vector<double>> tables,
                        std::span<const double> weights, const SpaTrace& trace,
                        std::span<const double> llr_adjoint);

/// +1 where m >= 0.5, else -1.
SymbolBlock hard_decision(std::span<const double> marginals);

inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// ---------------------------------------------------------------------------
// Arithmetic backends for the shared kernel.

struct DoubleBackend {
  using Value = double;

  Value zero() const { return 0.0; }
  Value add(Value a, Value b) const { return a + b; }
  Value sub(Value a, Value b) const { return a - b; }
  Value mul(Value a, Value b) const { return a * b; }
  Value clamp(Value a) const { return std::clamp(a, -kLlrClamp, kLlrClamp); }
  Value sum(std::span<const Value> terms) const {
    double acc = 0.0;
    for (double t : terms) acc += t;
    return acc;
  }
  Value log_sum_exp(std::span<const Value> terms) const {
    double peak = -std::numeric_limits<double>::infinity();
    for (double t : terms) peak = std::max(peak, t);
    double acc = 0.0;
    for (double t : terms) acc += std::exp(t - peak);
    return peak + std::log(acc);
  }
};

struct TapeBackend {
  using Value = ad::Var;

  ad::Tape* tape;
  ad::Var zero_node;

  explicit TapeBackend(ad::Tape& t) : tape(&t), zero_node(t.constant(0.0)) {}

  Value zero() const { return zero_node; }
  Value add(Value a, Value b) const { return tape->add(a, b); }
  Value sub(Value a, Value b) const { return tape->sub(a, b); }
  Value mul(Value a, Value b) const { return tape->mul(a, b); }
  Value clamp(Value a) const { return tape->clamp(a, -kLlrClamp, kLlrClamp); }
  Value sum(std::span<const Value> terms) const { return tape->sum(terms); }
  Value log_sum_exp(std::span<const Value> terms) const { return tape->log_sum_exp(terms); }
};

/// Flooding-schedule sum-product on LLR messages.
///
/// tables[f] holds the 2^d log values of factor f. If weights is non-empty it
/// holds iterations * num_edges multipliers laid out as NbpWeights::values.
/// Returns the sum of final incoming factor-to-variable LLRs per variable.
template <class Backend>
std::vector<typename Backend::Value> spa_kernel(const Backend& b, const SpaTopology& topo,
                                                std::span<const std::vector<typename Backend::Value>> tables,
                                                int iterations,
                                                std::span<const typename Backend::Value> weights) {
  using V = typename Backend::Value;
  const std::size_t E = topo.num_edges();
  const std::size_t F = topo.num_factors();
  if (tables.size() != F) throw std::invalid_argument("spa: one table per factor required");
  if (iterations < 0) throw std::invalid_argument("spa: negative iteration count");
  if (!weights.empty() && weights.size() != E * static_cast<std::size_t>(iterations))
    throw std::invalid_argument("spa: NBP weight dimensions do not match graph and iteration count");

  std::vector<V> v2f(E, b.zero());
  std::vector<V> f2v(E, b.zero());
  std::vector<V> config_sum;
  std::vector<V> terms;
  std::vector<V> half_plus;
  std::vector<V> half_minus;

  for (int t = 0; t < iterations; ++t) {
    for (std::size_t f = 0; f < F; ++f) {
      const std::size_t e0 = topo.fn_edge_begin[f];
      const int d = topo.fn_degree(f);
      const std::size_t size = std::size_t{1} << d;
      const auto& table = tables[f];
      if (table.size() != size) throw std::invalid_argument("spa: table size does not match factor degree");
      // config_sum[c] = table[c] + sum of incoming LLRs of neighbors at +1 in c.
      config_sum.resize(size);
      for (std::size_t c = 0; c < size; ++c) {
        terms.clear();
        terms.push_back(table[c]);
        for (int j = 0; j < d; ++j)
          if (((c >> j) & 1u) == 0) terms.push_back(v2f[e0 + static_cast<std::size_t>(j)]);
        config_sum[c] = terms.size() == 1 ? terms[0] : b.sum(terms);
      }
      for (int i = 0; i < d; ++i) {
        half_plus.clear();
        half_minus.clear();
        for (std::size_t c = 0; c < size; ++c)
          (((c >> i) & 1u) == 0 ? half_plus : half_minus).push_back(config_sum[c]);
        const std::size_t e = e0 + static_cast<std::size_t>(i);
        const V lp = half_plus.size() == 1 ? half_plus[0] : b.log_sum_exp(half_plus);
        const V lm = half_minus.size() == 1 ? half_minus[0] : b.log_sum_exp(half_minus);
        V out = b.clamp(b.sub(b.sub(lp, v2f[e]), lm));
        if (!weights.empty()) out = b.mul(weights[static_cast<std::size_t>(t) * E + e], out);
        f2v[e] = out;
      }
    }
    if (t + 1 == iterations) break;
    for (int v = 0; v < topo.num_variables; ++v) {
      const auto begin = topo.vn_edge_begin[static_cast<std::size_t>(v)];
      const auto end = topo.vn_edge_begin[static_cast<std::size_t>(v) + 1];
      if (begin == end) continue;
      terms.clear();
      for (auto k = begin; k < end; ++k) terms.push_back(f2v[topo.vn_edges[k]]);
      const V total = b.sum(terms);
      for (auto k = begin; k < end; ++k) {
        const auto e = topo.vn_edges[k];
        v2f[e] = b.clamp(b.sub(total, f2v[e]));
      }
    }
  }

  std::vector<V> llr(static_cast<std::size_t>(topo.num_variables), b.zero());
  if (iterations == 0) return llr;
  for (int v = 0; v < topo.num_variables; ++v) {
    const auto begin = topo.vn_edge_begin[static_cast<std::size_t>(v)];
    const auto end = topo.vn_edge_begin[static_cast<std::size_t>(v) + 1];
    if (begin == end) continue;
    terms.clear();
    for (auto k = begin; k < end; ++k) terms.push_back(f2v[topo.vn_edges[k]]);
    llr[static_cast<std::size_t>(v)] = b.sum(terms);
  }
  return llr;
}

}  // namespace fgc
