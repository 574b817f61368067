#include "fgc/spa.hpp"

namespace fgc {

SpaTopology SpaTopology::from_neighbors(int num_variables, std::span<const std::vector<int>> neighbors) {
  SpaTopology topo;
  topo.num_variables = num_variables;
  topo.fn_edge_begin.reserve(neighbors.size() + 1);
  topo.fn_edge_begin.push_back(0);
  std::vector<std::uint32_t> degree(static_cast<std::size_t>(num_variables), 0);
  for (const auto& nb : neighbors) {
    for (int v : nb) {
      if (v < 0 || v >= num_variables) throw std::invalid_argument("spa: neighbor id out of range");
      topo.edge_variable.push_back(v);
      ++degree[static_cast<std::size_t>(v)];
    }
    topo.fn_edge_begin.push_back(static_cast<std::uint32_t>(topo.edge_variable.size()));
  }
  topo.vn_edge_begin.assign(static_cast<std::size_t>(num_variables) + 1, 0);
  for (int v = 0; v < num_variables; ++v)
    topo.vn_edge_begin[static_cast<std::size_t>(v) + 1] =
        topo.vn_edge_begin[static_cast<std::size_t>(v)] + degree[static_cast<std::size_t>(v)];
  topo.vn_edges.resize(topo.edge_variable.size());
  std::vector<std::uint32_t> fill(topo.vn_edge_begin.begin(), topo.vn_edge_begin.end() - 1);
  for (std::size_t e = 0; e < topo.edge_variable.size(); ++e)
    topo.vn_edges[fill[static_cast<std::size_t>(topo.edge_variable[e])]++] = static_cast<std::uint32_t>(e);
  return topo;
}

SpaTopology SpaTopology::from_graph(const FactorGraph& graph) {
  std::vector<std::vector<int>> neighbors;
  neighbors.reserve(graph.factors().size());
  for (const auto& fn : graph.factors()) neighbors.push_back(fn.neighbors);
  return from_neighbors(graph.num_variables(), neighbors);
}

NbpWeights NbpWeights::ones(std::size_t num_edges, int iterations) {
  if (iterations < 0) throw std::invalid_argument("NbpWeights: negative iteration count");
  NbpWeights w;
  w.iterations = iterations;
  w.num_edges = num_edges;
  w.values.assign(num_edges * static_cast<std::size_t>(iterations), 1.0);
  return w;
}

MessageState init_messages(const SpaTopology& topology) {
  return {std::vector<double>(topology.num_edges(), 0.0), std::vector<double>(topology.num_edges(), 0.0)};
}

std::vector<double> fn_update(std::span<const double> log_table, std::span<const double> incoming) {
  const std::size_t d = incoming.size();
  if (log_table.size() != (std::size_t{1} << d))
    throw std::invalid_argument("fn_update: table size does not match the number of incoming messages");
  const DoubleBackend b;
  std::vector<double> out(d);
  const std::size_t size = log_table.size();
  std::vector<double> config_sum(size), plus, minus;
  for (std::size_t c = 0; c < size; ++c) {
    double s = log_table[c];
    for (std::size_t j = 0; j < d; ++j)
      if (((c >> j) & 1u) == 0) s += incoming[j];
    config_sum[c] = s;
  }
  for (std::size_t i = 0; i < d; ++i) {
    plus.clear();
    minus.clear();
    for (std::size_t c = 0; c < size; ++c) (((c >> i) & 1u) == 0 ? plus : minus).push_back(config_sum[c]);
    out[i] = b.clamp(b.log_sum_exp(plus) - incoming[i] - b.log_sum_exp(minus));
  }
  return out;
}

std::vector<double> vn_update(std::span<const double> incoming) {
  double total = 0.0;
  for (double v : incoming) total += v;
  std::vector<double> out(incoming.size());
  for (std::size_t e = 0; e < incoming.size(); ++e) out[e] = std::clamp(total - incoming[e], -kLlrClamp, kLlrClamp);
  return out;
}

std::vector<double> run_spa_llr(const FactorGraph& graph, const SpaConfig& config, const NbpWeights* weights) {
  const auto topo = SpaTopology::from_graph(graph);
  std::vector<std::vector<double>> tables;
  tables.reserve(graph.factors().size());
  for (const auto& fn : graph.factors()) tables.push_back(fn.log_values);
  std::span<const double> w;
  if (config.nbp_enabled && weights != nullptr) {
    if (weights->num_edges != topo.num_edges() || weights->iterations != config.iterations)
      throw std::invalid_argument("run_spa: NBP weight dimensions do not match graph and iteration count");
    w = weights->values;
  }
  return spa_kernel(DoubleBackend{}, topo, std::span<const std::vector<double>>(tables), config.iterations, w);
}

std::vector<double> run_spa(const FactorGraph& graph, const SpaConfig& config, const NbpWeights* weights) {
  auto llr = run_spa_llr(graph, config, weights);
  for (auto& v : llr) v = sigmoid(v);
  return llr;
}

namespace {

bool in_clamp_range(double x) { return x >= -kLlrClamp && x <= kLlrClamp; }

// config_sum[c] = table[c] + sum of incoming LLRs of neighbors at +1 in c.
void config_sums(std::span<const double> table, const double* incoming, int d, std::vector<double>& out) {
  const std::size_t size = std::size_t{1} << d;
  out.resize(size);
  for (std::size_t c = 0; c < size; ++c) {
    double acc = table[c];
    for (int j = 0; j < d; ++j)
      if (((c >> j) & 1u) == 0) acc += incoming[j];
    out[c] = acc;
  }
}

// Log-sum-exp over the configurations with bit i clear (plus) and set
// (minus), for every i. One exponential per configuration against the global
// peak; a half that underflows is redone against its own peak.
struct FactorHalves {
  double peak = 0.0;
  std::vector<double> scaled;  // exp(config_sum[c] - peak)
  double plus[32];
  double minus[32];
  bool exact_plus[32];
  bool exact_minus[32];
};

double half_lse(const std::vector<double>& config_sum, int i, std::size_t bit) {
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < config_sum.size(); ++c)
    if (((c >> i) & 1u) == bit) peak = std::max(peak, config_sum[c]);
  double acc = 0.0;
  for (std::size_t c = 0; c < config_sum.size(); ++c)
    if (((c >> i) & 1u) == bit) acc += std::exp(config_sum[c] - peak);
  return peak + std::log(acc);
}

void factor_halves(const std::vector<double>& config_sum, int d, FactorHalves& h) {
  h.peak = *std::max_element(config_sum.begin(), config_sum.end());
  h.scaled.resize(config_sum.size());
  for (std::size_t c = 0; c < config_sum.size(); ++c) h.scaled[c] = std::exp(config_sum[c] - h.peak);
  constexpr double kTiny = 1e-250;
  for (int i = 0; i < d; ++i) {
    double sp = 0.0, sm = 0.0;
    for (std::size_t c = 0; c < config_sum.size(); ++c) (((c >> i) & 1u) == 0 ? sp : sm) += h.scaled[c];
    h.exact_plus[i] = sp < kTiny;
    h.exact_minus[i] = sm < kTiny;
    h.plus[i] = h.exact_plus[i] ? half_lse(config_sum, i, 0) : h.peak + std::log(sp);
    h.minus[i] = h.exact_minus[i] ? half_lse(config_sum, i, 1) : h.peak + std::log(sm);
  }
}

// Adds g * d(plus_i - minus_i)/d config_sum to g_config.
void add_half_gradient(const std::vector<double>& config_sum, const FactorHalves& h, int i, double g,
                       std::vector<double>& g_config) {
  const double rp = std::exp(h.peak - h.plus[i]);
  const double rm = std::exp(h.peak - h.minus[i]);
  for (std::size_t c = 0; c < config_sum.size(); ++c) {
    if (((c >> i) & 1u) == 0)
      g_config[c] += g * (h.exact_plus[i] ? std::exp(config_sum[c] - h.plus[i]) : h.scaled[c] * rp);
    else
      g_config[c] -= g * (h.exact_minus[i] ? std::exp(config_sum[c] - h.minus[i]) : h.scaled[c] * rm);
  }
}

void check_trace_inputs(const SpaTopology& topo, std::span<const std::vector<double>> tables, int iterations,
                        std::span<const double> weights) {
  if (tables.size() != topo.num_factors()) throw std::invalid_argument("spa: one table per factor required");
  if (iterations < 0) throw std::invalid_argument("spa: negative iteration count");
  if (!weights.empty() && weights.size() != topo.num_edges() * static_cast<std::size_t>(iterations))
    throw std::invalid_argument("spa: NBP weight dimensions do not match graph and iteration count");
  for (std::size_t f = 0; f < tables.size(); ++f)
    if (topo.fn_degree(f) > 20 || tables[f].size() != (std::size_t{1} << topo.fn_degree(f)))
      throw std::invalid_argument("spa: table size does not match factor degree");
}

}  // namespace

SpaTrace spa_forward(const SpaTopology& topo, std::span<const std::vector<double>> tables, int iterations,
                     std::span<const double> weights) {
  check_trace_inputs(topo, tables, iterations, weights);
  const std::size_t E = topo.num_edges();
  const auto N = static_cast<std::size_t>(iterations);
  SpaTrace tr;
  tr.iterations = iterations;
  tr.v2f.assign(N * E, 0.0);
  tr.f2v.assign(N * E, 0.0);
  tr.llr.assign(static_cast<std::size_t>(topo.num_variables), 0.0);
  std::vector<double> config_sum;
  FactorHalves halves;
  for (std::size_t t = 0; t < N; ++t) {
    const double* v2f = tr.v2f.data() + t * E;
    double* f2v = tr.f2v.data() + t * E;
    for (std::size_t f = 0; f < topo.num_factors(); ++f) {
      const std::size_t e0 = topo.fn_edge_begin[f];
      const int d = topo.fn_degree(f);
      config_sums(tables[f], v2f + e0, d, config_sum);
      factor_halves(config_sum, d, halves);
      for (int i = 0; i < d; ++i) {
        const std::size_t e = e0 + static_cast<std::size_t>(i);
        double out = std::clamp(halves.plus[i] - v2f[e] - halves.minus[i], -kLlrClamp, kLlrClamp);
        if (!weights.empty()) out *= weights[t * E + e];
        f2v[e] = out;
      }
    }
    if (t + 1 == N) break;
    double* next = tr.v2f.data() + (t + 1) * E;
    for (int v = 0; v < topo.num_variables; ++v) {
      const auto begin = topo.vn_edge_begin[static_cast<std::size_t>(v)];
      const auto end = topo.vn_edge_begin[static_cast<std::size_t>(v) + 1];
      double total = 0.0;
      for (auto k = begin; k < end; ++k) total += f2v[topo.vn_edges[k]];
      for (auto k = begin; k < end; ++k) {
        const auto e = topo.vn_edges[k];
        next[e] = std::clamp(total - f2v[e], -kLlrClamp, kLlrClamp);
      }
    }
  }
  if (N == 0) return tr;
  const double* last = tr.f2v.data() + (N - 1) * E;
  for (int v = 0; v < topo.num_variables; ++v) {
    double total = 0.0;
    for (auto k = topo.vn_edge_begin[static_cast<std::size_t>(v)]; k < topo.vn_edge_begin[static_cast<std::size_t>(v) + 1]; ++k)
      total += last[topo.vn_edges[k]];
    tr.llr[static_cast<std::size_t>(v)] = total;
  }
  return tr;
}

SpaAdjoint spa_backward(const SpaTopology& topo, std::span<const std::vector<double>> tables,
                        std::span<const double> weights, const SpaTrace& tr, std::span<const double> llr_adjoint) {
  check_trace_inputs(topo, tables, tr.iterations, weights);
  if (llr_adjoint.size() != static_cast<std::size_t>(topo.num_variables))
    throw std::invalid_argument("spa_backward: one adjoint per variable required");
  const std::size_t E = topo.num_edges();
  const auto N = static_cast<std::size_t>(tr.iterations);
  SpaAdjoint adj;
  adj.tables.resize(tables.size());
  for (std::size_t f = 0; f < tables.size(); ++f) adj.tables[f].assign(tables[f].size(), 0.0);
  adj.weights.assign(weights.size(), 0.0);
  if (N == 0) return adj;

  std::vector<double> g_f2v(E), g_v2f(E), g_pre(E);
  for (std::size_t e = 0; e < E; ++e) g_f2v[e] = llr_adjoint[static_cast<std::size_t>(topo.edge_variable[e])];
  std::vector<double> config_sum, g_config;
  FactorHalves halves;
  for (std::size_t t = N; t-- > 0;) {
    const double* v2f = tr.v2f.data() + t * E;
    std::fill(g_v2f.begin(), g_v2f.end(), 0.0);
    for (std::size_t f = 0; f < topo.num_factors(); ++f) {
      const std::size_t e0 = topo.fn_edge_begin[f];
      const int d = topo.fn_degree(f);
      bool any = false;
      for (int i = 0; i < d; ++i) any = any || g_f2v[e0 + static_cast<std::size_t>(i)] != 0.0;
      if (!any) continue;
      config_sums(tables[f], v2f + e0, d, config_sum);
      factor_halves(config_sum, d, halves);
      g_config.assign(config_sum.size(), 0.0);
      for (int i = 0; i < d; ++i) {
        const std::size_t e = e0 + static_cast<std::size_t>(i);
        double g = g_f2v[e];
        if (g == 0.0) continue;
        const double raw = halves.plus[i] - v2f[e] - halves.minus[i];
        if (!weights.empty()) {
          adj.weights[t * E + e] += g * std::clamp(raw, -kLlrClamp, kLlrClamp);
          g *= weights[t * E + e];
        }
        if (!in_clamp_range(raw)) continue;
        g_v2f[e] -= g;
        add_half_gradient(config_sum, halves, i, g, g_config);
      }
      auto& g_table = adj.tables[f];
      for (std::size_t c = 0; c < config_sum.size(); ++c) {
        g_table[c] += g_config[c];
        for (int j = 0; j < d; ++j)
          if (((c >> j) & 1u) == 0) g_v2f[e0 + static_cast<std::size_t>(j)] += g_config[c];
      }
    }
    if (t == 0) break;
    // v2f of iteration t came from the VN update on f2v of iteration t-1.
    const double* f2v = tr.f2v.data() + (t - 1) * E;
    for (int v = 0; v < topo.num_variables; ++v) {
      const auto begin = topo.vn_edge_begin[static_cast<std::size_t>(v)];
      const auto end = topo.vn_edge_begin[static_cast<std::size_t>(v) + 1];
      double total = 0.0;
      for (auto k = begin; k < end; ++k) total += f2v[topo.vn_edges[k]];
      double g_total = 0.0;
      for (auto k = begin; k < end; ++k) {
        const auto e = topo.vn_edges[k];
        g_pre[e] = in_clamp_range(total - f2v[e]) ? g_v2f[e] : 0.0;
        g_total += g_pre[e];
      }
      for (auto k = begin; k < end; ++k) {
        const auto e = topo.vn_edges[k];
        g_f2v[e] = g_total - g_pre[e];
      }
    }
  }
  return adj;
}

SymbolBlock hard_decision(std::span<const double> marginals) {
  SymbolBlock out;
  out.symbols.reserve(marginals.size());
  for (double m : marginals) out.symbols.push_back(m >= 0.5 ? Symbol{1} : Symbol{-1});
  return out;
}

}  // namespace fgc
