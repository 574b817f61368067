#include "fgc/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "fgc/channel.hpp"
#include "fgc/cluster_model.hpp"
#include "fgc/evaluate.hpp"

namespace fgc {

std::vector<double> exhaustive_marginals(const FactorGraph& graph) {
  const int n = graph.num_variables();
  if (n > 20) throw std::invalid_argument("exhaustive_marginals: too many variables");
  const std::size_t count = std::size_t{1} << n;
  std::vector<double> log_g(count);
  std::vector<Symbol> x(static_cast<std::size_t>(n));
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < count; ++c) {
    for (int v = 0; v < n; ++v) x[static_cast<std::size_t>(v)] = config_value(c, v);
    log_g[c] = global_log_function(graph, x);
    peak = std::max(peak, log_g[c]);
  }
  double total = 0.0;
  std::vector<double> plus(static_cast<std::size_t>(n), 0.0);
  for (std::size_t c = 0; c < count; ++c) {
    const double w = std::exp(log_g[c] - peak);
    total += w;
    for (int v = 0; v < n; ++v)
      if (((c >> v) & 1u) == 0) plus[static_cast<std::size_t>(v)] += w;
  }
  for (auto& p : plus) p /= total;
  return plus;
}

FactorGraph random_tree_graph(RandomStream& rng, int max_variables, int max_degree, double scale) {
  if (max_variables < 1 || max_degree < 1) throw std::invalid_argument("random_tree_graph: bad limits");
  auto uniform_int = [&](int lo, int hi) { return lo + static_cast<int>(rng.next_u32() % static_cast<std::uint32_t>(hi - lo + 1)); };
  const int target = uniform_int(1, max_variables);
  std::vector<std::vector<int>> neighbors;
  int n = 1;
  while (n < target) {
    // Attach one existing variable to d - 1 fresh ones.
    const int d = std::min(uniform_int(2, std::max(2, max_degree)), target - n + 1);
    std::vector<int> nb{uniform_int(0, n - 1)};
    for (int i = 1; i < d; ++i) nb.push_back(n++);
    neighbors.push_back(std::move(nb));
  }
  for (int v = 0; v < n; ++v)
    if (rng.uniform() < 0.5) neighbors.push_back({v});
  std::vector<LocalFunction> fns;
  for (auto& nb : neighbors) {
    std::sort(nb.begin(), nb.end());
    LocalFunction f{nb, std::vector<double>(std::size_t{1} << nb.size())};
    for (auto& t : f.log_values) t = scale * rng.normal();
    fns.push_back(std::move(f));
  }
  // Shuffle factor order so the tree is not laid out breadth-first.
  for (std::size_t i = fns.size(); i > 1; --i) std::swap(fns[i - 1], fns[rng.next_u32() % i]);
  return FactorGraph(n, std::move(fns));
}

GradientInstance random_gradient_instance(RandomStream& rng) {
  auto uniform_int = [&](int lo, int hi) { return lo + static_cast<int>(rng.next_u32() % static_cast<std::uint32_t>(hi - lo + 1)); };
  const int L = uniform_int(1, 2);
  const int K = uniform_int(8, 10);
  std::vector<double> taps(static_cast<std::size_t>(L + 1));
  for (auto& t : taps) t = rng.normal();
  taps[0] += taps[0] >= 0 ? 0.2 : -0.2;
  const ChannelSpec channel(taps);
  const double noise_variance = 0.5 + 0.5 * rng.uniform();
  const SymbolBlock x = sample_symbols(K, rng);
  const ObservationBlock y = transmit(x, channel, noise_variance, rng);
  const FactorGraph bfg = build_ufg(channel, y);
  const int degree = uniform_int(2, L + 2);
  const ContainerSet containers = enumerate_containers(K, L, degree);
  const OptionsList options = clustering_options(bfg, containers);
  ClusterWeights weights = ClusterWeights::random_normal(options, rng);
  for (std::size_t i = 0; i < weights.beta.size(); ++i) {
    const std::size_t keep = rng.next_u32() % weights.beta[i].size();
    for (std::size_t j = 0; j < weights.beta[i].size(); ++j)
      if (j != keep && rng.uniform() < 0.2) {
        weights.mask[i][j] = 1;
        weights.beta[i][j] = -std::numeric_limits<double>::infinity();
      }
  }
  std::vector<std::vector<int>> nb;
  for (const auto& c : containers.containers) nb.push_back(c.variables);
  GradientInstance inst{channel,
                        x,
                        bfg,
                        ClusterPlan(bfg, containers, options),
                        SpaTopology::from_neighbors(K, nb),
                        weights,
                        uniform_int(1, 5),
                        rng.uniform() < 0.5,
                        rng.uniform() < 0.75 ? LossKind::SoftBer : LossKind::CrossEntropy,
                        {}};
  for (std::size_t i = 0; i < weights.beta.size(); ++i)
    for (std::size_t j = 0; j < weights.beta[i].size(); ++j)
      if (!weights.masked(i, j)) inst.params.push_back(weights.beta[i][j]);
  if (inst.nbp) {
    const std::size_t count = static_cast<std::size_t>(inst.iterations) * inst.topology.num_edges();
    for (std::size_t e = 0; e < count; ++e) inst.params.push_back(0.5 + rng.uniform());
  }
  return inst;
}

ad::Computation full_pipeline(const GradientInstance& inst) {
  return [&inst](ad::Tape& tape, std::span<const ad::Var> params) {
    const ClusterPlan& plan = inst.plan;
    std::vector<ad::Var> alpha(plan.num_slots());
    std::vector<std::uint8_t> active(plan.num_slots(), 0);
    std::size_t next = 0;
    for (int fn = 0; fn < plan.num_bfg_factors(); ++fn) {
      std::vector<ad::Var> logits;
      std::vector<std::size_t> slots;
      for (std::size_t j = 0; j < inst.weights.beta[static_cast<std::size_t>(fn)].size(); ++j) {
        if (inst.weights.masked(static_cast<std::size_t>(fn), j)) continue;
        logits.push_back(params[next++]);
        slots.push_back(plan.slot(fn, static_cast<int>(j)));
      }
      const auto a = tape.softmax(logits);
      for (std::size_t j = 0; j < a.size(); ++j) {
        alpha[slots[j]] = a[j];
        active[slots[j]] = 1;
      }
    }
    const auto nbp = params.subspan(next);
    return record_sequence_loss(tape, plan, inst.topology, inst.bfg, alpha, active, nbp, inst.symbols,
                                inst.iterations, inst.loss);
  };
}

namespace {

struct LongDoubleBackend {
  using Value = long double;

  Value zero() const { return 0.0L; }
  Value add(Value a, Value b) const { return a + b; }
  Value sub(Value a, Value b) const { return a - b; }
  Value mul(Value a, Value b) const { return a * b; }
  Value clamp(Value a) const { return std::clamp<long double>(a, -kLlrClamp, kLlrClamp); }
  Value sum(std::span<const Value> terms) const {
    long double acc = 0.0L;
    for (auto t : terms) acc += t;
    return acc;
  }
  Value log_sum_exp(std::span<const Value> terms) const {
    long double peak = -std::numeric_limits<long double>::infinity();
    for (auto t : terms) peak = std::max(peak, t);
    long double acc = 0.0L;
    for (auto t : terms) acc += std::exp(t - peak);
    return peak + std::log(acc);
  }
};

std::string format_error(double e) {
  std::ostringstream out;
  out.precision(3);
  out << std::scientific << e;
  return out.str();
}

}  // namespace

long double extended_pipeline_loss(const GradientInstance& inst, std::span<const long double> params) {
  const ClusterPlan& plan = inst.plan;
  std::vector<long double> alpha(plan.num_slots(), 0.0L);
  std::size_t next = 0;
  for (int fn = 0; fn < plan.num_bfg_factors(); ++fn) {
    const auto& beta = inst.weights.beta[static_cast<std::size_t>(fn)];
    std::vector<std::size_t> slots;
    long double peak = -std::numeric_limits<long double>::infinity();
    for (std::size_t j = 0; j < beta.size(); ++j) {
      if (inst.weights.masked(static_cast<std::size_t>(fn), j)) continue;
      slots.push_back(plan.slot(fn, static_cast<int>(j)));
      alpha[slots.back()] = params[next++];
      peak = std::max(peak, alpha[slots.back()]);
    }
    long double total = 0.0L;
    for (auto s : slots) total += alpha[s] = std::exp(alpha[s] - peak);
    for (auto s : slots) alpha[s] /= total;
  }
  std::vector<std::vector<long double>> tables(plan.num_containers());
  for (std::size_t m = 0; m < tables.size(); ++m) {
    tables[m].assign(std::size_t{1} << plan.containers()[m].variables.size(), 0.0L);
    for (const auto& term : plan.terms(m)) {
      const auto& logf = inst.bfg.factor(term.fn).log_values;
      for (std::size_t c = 0; c < tables[m].size(); ++c)
        tables[m][c] += alpha[term.slot] * static_cast<long double>(logf[term.projection[c]]);
    }
  }
  const auto llr = spa_kernel(LongDoubleBackend{}, inst.topology, std::span<const std::vector<long double>>(tables),
                              inst.iterations, params.subspan(next));
  long double loss = 0.0L;
  for (std::size_t k = 0; k < llr.size(); ++k) {
    const long double z = -static_cast<long double>(inst.symbols[static_cast<int>(k)]) * llr[k];
    loss += inst.loss == LossKind::SoftBer ? 1.0L / (1.0L + std::exp(-z))
                                           : std::max(z, 0.0L) + std::log1p(std::exp(-std::fabs(z)));
  }
  return loss;
}

ad::GradientCheck extended_difference_check(const GradientInstance& inst, double step) {
  const auto analytic = ad::record_and_backprop(full_pipeline(inst), inst.params).gradient;
  std::vector<long double> probe(inst.params.begin(), inst.params.end());
  ad::GradientCheck result;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const long double saved = probe[i];
    probe[i] = saved + step;
    const long double up = extended_pipeline_loss(inst, probe);
    probe[i] = saved - step;
    const long double down = extended_pipeline_loss(inst, probe);
    probe[i] = saved;
    const auto numeric = static_cast<double>((up - down) / (2.0L * step));
    const double err = std::abs(numeric - analytic[i]) / std::max(std::abs(analytic[i]), 1e-8);
    if (err > result.max_relative_error || i == 0) result = {err, i, analytic[i], numeric};
  }
  return result;
}

SuiteResult tree_exactness_suite(int graphs, std::uint64_t seed) {
  SuiteResult r{"tree_exactness", false, 0.0, 1e-9, {}};
  for (int g = 0; g < graphs; ++g) {
    RandomStream rng(seed, static_cast<std::uint64_t>(g));
    const FactorGraph graph = random_tree_graph(rng, 10, 4);
    const auto exact = exhaustive_marginals(graph);
    const auto spa = run_spa(graph, {2 * graph.num_variables() + 1, false});
    for (std::size_t v = 0; v < exact.size(); ++v) r.metric = std::max(r.metric, std::fabs(exact[v] - spa[v]));
  }
  r.passed = r.metric < r.tolerance;
  r.detail = std::to_string(graphs) + " graphs, max |dm| = " + format_error(r.metric);
  return r;
}

SuiteResult cluster_preservation_suite(int draws, std::uint64_t seed) {
  constexpr int K = 8;
  SuiteResult r{"cluster_preservation", false, 0.0, 1e-9, {}};
  const ChannelSpec channel = ChannelSpec::reference();
  const int L = channel.memory();
  std::vector<Symbol> x(K);
  for (int d = 0; d < draws; ++d) {
    RandomStream rng(seed, static_cast<std::uint64_t>(d));
    const ObservationBlock y = transmit(sample_symbols(K, rng), channel, 0.5, rng);
    const FactorGraph ufg = build_ufg(channel, y);
    const ContainerSet containers = enumerate_containers(K, L, d % 2 == 0 ? 3 : 4);
    const OptionsList options = clustering_options(ufg, containers);
    ClusterWeights weights = ClusterWeights::random_normal(options, rng);
    for (auto& b : weights.beta)
      for (auto& v : b) v *= 3.0;
    const FactorGraph cc = build_clustered_graph(ufg, containers, options, compute_alphas(weights));
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t c = 0; c < (std::size_t{1} << K); ++c) {
      for (int k = 0; k < K; ++k) x[static_cast<std::size_t>(k)] = config_value(c, k);
      const double diff = global_log_function(cc, x) - global_log_function(ufg, x);
      lo = std::min(lo, diff);
      hi = std::max(hi, diff);
    }
    r.metric = std::max(r.metric, hi - lo);
  }
  r.passed = r.metric < r.tolerance;
  r.detail = std::to_string(draws) + " draws, max spread = " + format_error(r.metric);
  return r;
}

SuiteResult one_hot_suite(int draws, std::uint64_t seed) {
  constexpr int K = 8;
  SuiteResult r{"one_hot_equals_discrete", false, 0.0, 1e-12, {}};
  const ChannelSpec channel = ChannelSpec::reference();
  for (int d = 0; d < draws; ++d) {
    RandomStream rng(seed, static_cast<std::uint64_t>(d));
    ClusterModel model = ClusterModel::create(channel, K, d % 2 == 0 ? 3 : 4);
    const ObservationBlock y = transmit(sample_symbols(K, rng), channel, 0.5, rng);
    const FactorGraph ufg = build_ufg(channel, y);
    std::vector<int> assignment;
    for (std::size_t i = 0; i < model.options.size(); ++i) {
      const std::size_t pick = rng.next_u32() % model.options[i].size();
      assignment.push_back(model.options[i][pick]);
      for (std::size_t j = 0; j < model.options[i].size(); ++j) {
        model.weights.mask[i][j] = j != pick;
        model.weights.beta[i][j] = j == pick ? 0.0 : -std::numeric_limits<double>::infinity();
      }
    }
    const FactorGraph discrete = apply_discrete_clustering(ufg, model.containers, model.options, assignment);
    const auto inst = clustered_instance(model, y, false);
    const SpaConfig config{10, false};
    const auto a = run_spa(discrete, config);
    const auto b = run_spa(inst.simplified.graph, config);
    for (int k = 0; k < K; ++k)
      r.metric = std::max(r.metric, std::fabs(a[static_cast<std::size_t>(k)] - b[static_cast<std::size_t>(k)]));
  }
  r.passed = r.metric < r.tolerance;
  r.detail = std::to_string(draws) + " assignments, max |dm| = " + format_error(r.metric);
  return r;
}

SuiteResult gradient_suite(int instances, std::uint64_t seed, double step) {
  SuiteResult r{"gradient_check", false, 0.0, 1e-4, {}};
  std::size_t params = 0;
  for (int i = 0; i < instances; ++i) {
    RandomStream rng(seed, static_cast<std::uint64_t>(i));
    const GradientInstance inst = random_gradient_instance(rng);
    const auto check = extended_difference_check(inst, step);
    params += inst.params.size();
    r.metric = std::max(r.metric, check.max_relative_error);
  }
  r.passed = r.metric < r.tolerance;
  r.detail = std::to_string(instances) + " instances, " + std::to_string(params) +
             " parameters, max relative error = " + format_error(r.metric);
  return r;
}

}  // namespace fgc
