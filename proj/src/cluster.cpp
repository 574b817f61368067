#include "fgc/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>
#include <string>

namespace fgc {

int cyclic_span(std::span<const int> sorted_variables, int num_variables) {
  if (sorted_variables.empty()) return 0;
  int largest_gap = sorted_variables.front() + num_variables - sorted_variables.back();
  for (std::size_t i = 1; i < sorted_variables.size(); ++i)
    largest_gap = std::max(largest_gap, sorted_variables[i] - sorted_variables[i - 1]);
  return num_variables - largest_gap;
}

namespace {

// First variable of the minimal covering window; the smallest one on ties.
int window_start_of(const std::vector<int>& sorted_variables, int num_variables) {
  int best_gap = -1;
  int start = 0;
  for (std::size_t i = 0; i < sorted_variables.size(); ++i) {
    const int gap = i == 0 ? sorted_variables.front() + num_variables - sorted_variables.back()
                           : sorted_variables[i] - sorted_variables[i - 1];
    if (gap > best_gap) {
      best_gap = gap;
      start = sorted_variables[i];
    }
  }
  return start;
}

}  // namespace

ContainerSet enumerate_containers(int num_variables, int memory, int degree, int span_limit) {
  if (memory < 0) throw std::invalid_argument("enumerate_containers: negative channel memory");
  if (span_limit < 0) span_limit = memory + 1;
  if (num_variables < span_limit + 1)
    throw std::invalid_argument("enumerate_containers: block length " + std::to_string(num_variables) +
                                " is below span_limit+1 = " + std::to_string(span_limit + 1));
  if (degree < 2 || degree > span_limit + 1)
    throw std::invalid_argument("enumerate_containers: degree " + std::to_string(degree) +
                                " must lie in [2, span_limit+1]");

  ContainerSet set;
  set.num_variables = num_variables;
  set.degree = degree;
  set.span_limit = span_limit;

  // Every subset inside the window starting at s: s plus degree-1 offsets
  // from 1..span_limit.
  std::set<std::vector<int>> seen;
  std::vector<int> pick(static_cast<std::size_t>(degree - 1));
  for (int s = 0; s < num_variables; ++s) {
    for (std::size_t i = 0; i < pick.size(); ++i) pick[i] = static_cast<int>(i) + 1;
    while (true) {
      std::vector<int> vars{s};
      for (int o : pick) vars.push_back((s + o) % num_variables);
      std::sort(vars.begin(), vars.end());
      if (seen.insert(vars).second) {
        const int span = cyclic_span(vars, num_variables);
        set.containers.push_back({vars, span, window_start_of(vars, num_variables)});
      }
      // next combination of offsets
      int i = static_cast<int>(pick.size()) - 1;
      while (i >= 0 && pick[static_cast<std::size_t>(i)] == span_limit - (static_cast<int>(pick.size()) - 1 - i)) --i;
      if (i < 0) break;
      ++pick[static_cast<std::size_t>(i)];
      for (std::size_t j = static_cast<std::size_t>(i) + 1; j < pick.size(); ++j) pick[j] = pick[j - 1] + 1;
    }
  }
  std::sort(set.containers.begin(), set.containers.end(), [](const Container& a, const Container& b) {
    if (a.window_start != b.window_start) return a.window_start < b.window_start;
    return a.variables < b.variables;
  });
  return set;
}

OptionsList clustering_options(const FactorGraph& bfg, const ContainerSet& containers) {
  if (bfg.num_variables() != containers.num_variables)
    throw std::invalid_argument("clustering_options: graph and containers disagree on the variable count");
  std::vector<std::vector<int>> by_variable(static_cast<std::size_t>(bfg.num_variables()));
  for (std::size_t m = 0; m < containers.size(); ++m)
    for (int v : containers[m].variables) by_variable[static_cast<std::size_t>(v)].push_back(static_cast<int>(m));

  OptionsList options(static_cast<std::size_t>(bfg.num_factors()));
  for (int f = 0; f < bfg.num_factors(); ++f) {
    const auto& nb = bfg.factor(f).neighbors;
    if (nb.empty()) throw std::invalid_argument("clustering_options: factor " + std::to_string(f) + " has no neighbors");
    for (int m : by_variable[static_cast<std::size_t>(nb.front())]) {
      const auto& vars = containers[static_cast<std::size_t>(m)].variables;
      if (std::includes(vars.begin(), vars.end(), nb.begin(), nb.end()))
        options[static_cast<std::size_t>(f)].push_back(m);
    }
    if (options[static_cast<std::size_t>(f)].empty())
      throw std::invalid_argument("clustering_options: factor " + std::to_string(f) + " fits in no container");
  }
  return options;
}

ClusterWeights ClusterWeights::zeros(const OptionsList& options) {
  ClusterWeights w;
  for (const auto& opts : options) {
    w.beta.emplace_back(opts.size(), 0.0);
    w.mask.emplace_back(opts.size(), 0);
  }
  return w;
}

ClusterWeights ClusterWeights::random_normal(const OptionsList& options, RandomStream& rng) {
  ClusterWeights w = zeros(options);
  for (auto& row : w.beta)
    for (auto& b : row) b = rng.normal();
  return w;
}

std::size_t ClusterWeights::num_entries() const {
  std::size_t n = 0;
  for (const auto& row : beta) n += row.size();
  return n;
}

Alphas compute_alphas(const ClusterWeights& weights) {
  Alphas alphas(weights.beta.size());
  for (std::size_t i = 0; i < weights.beta.size(); ++i) {
    const auto& beta = weights.beta[i];
    auto& alpha = alphas[i];
    alpha.assign(beta.size(), 0.0);
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < beta.size(); ++j)
      if (!weights.masked(i, j)) peak = std::max(peak, beta[j]);
    if (!std::isfinite(peak))
      throw std::invalid_argument("compute_alphas: every option of factor " + std::to_string(i) + " is masked");
    double total = 0.0;
    for (std::size_t j = 0; j < beta.size(); ++j)
      if (!weights.masked(i, j)) total += (alpha[j] = std::exp(beta[j] - peak));
    for (auto& a : alpha) a /= total;
  }
  return alphas;
}

AssignmentMap assignment_map(const OptionsList& options, std::size_t num_containers) {
  AssignmentMap map(num_containers);
  for (std::size_t i = 0; i < options.size(); ++i)
    for (std::size_t j = 0; j < options[i].size(); ++j) {
      const auto m = static_cast<std::size_t>(options[i][j]);
      if (m >= num_containers) throw std::invalid_argument("assignment_map: container id out of range");
      map[m].push_back({static_cast<int>(i), static_cast<int>(j)});
    }
  return map;
}

ClusterPlan::ClusterPlan(const FactorGraph& bfg, const ContainerSet& containers, const OptionsList& options)
    : containers_(containers), options_(options) {
  if (static_cast<int>(options.size()) != bfg.num_factors())
    throw std::invalid_argument("ClusterPlan: options list does not match the basis graph");
  slot_offset_.reserve(options.size());
  for (const auto& opts : options) {
    slot_offset_.push_back(num_slots_);
    num_slots_ += opts.size();
  }
  terms_.resize(containers.size());
  for (int fn = 0; fn < bfg.num_factors(); ++fn) {
    const auto& nb = bfg.factor(fn).neighbors;
    const auto& opts = options[static_cast<std::size_t>(fn)];
    for (std::size_t j = 0; j < opts.size(); ++j) {
      const auto m = static_cast<std::size_t>(opts[j]);
      if (m >= containers.size()) throw std::invalid_argument("ClusterPlan: container id out of range");
      const auto& vars = containers[m].variables;
      std::vector<int> pos;
      for (int v : nb) {
        const auto it = std::lower_bound(vars.begin(), vars.end(), v);
        if (it == vars.end() || *it != v)
          throw std::invalid_argument("ClusterPlan: factor " + std::to_string(fn) + " is not inside container " +
                                      std::to_string(m));
        pos.push_back(static_cast<int>(it - vars.begin()));
      }
      Term term{fn, static_cast<int>(j), slot(fn, static_cast<int>(j)), {}};
      const std::size_t size = std::size_t{1} << vars.size();
      term.projection.resize(size);
      for (std::size_t c = 0; c < size; ++c) {
        std::size_t idx = 0;
        for (std::size_t b = 0; b < pos.size(); ++b) idx |= ((c >> pos[b]) & 1u) << b;
        term.projection[c] = static_cast<std::uint8_t>(idx);
      }
      terms_[m].push_back(std::move(term));
    }
  }
}

std::vector<std::vector<double>> ClusterPlan::tables(const FactorGraph& bfg, const Alphas& alphas) const {
  std::vector<std::vector<double>> out(terms_.size());
  for (std::size_t m = 0; m < terms_.size(); ++m) {
    const std::size_t size = std::size_t{1} << containers_[m].variables.size();
    auto& table = out[m];
    table.assign(size, 0.0);
    for (const auto& term : terms_[m]) {
      const double a = alphas[static_cast<std::size_t>(term.fn)][static_cast<std::size_t>(term.option)];
      if (a == 0.0) continue;
      const auto& logf = bfg.factor(term.fn).log_values;
      for (std::size_t c = 0; c < size; ++c) table[c] += a * logf[term.projection[c]];
    }
  }
  return out;
}

std::vector<std::vector<ad::Var>> ClusterPlan::tables(ad::Tape& tape, const FactorGraph& bfg,
                                                      std::span<const ad::Var> alpha_vars,
                                                      std::span<const std::uint8_t> active) const {
  if (alpha_vars.size() != num_slots_ || active.size() != num_slots_)
    throw std::invalid_argument("ClusterPlan::tables: one alpha variable per slot required");
  std::vector<std::vector<ad::Var>> out(terms_.size());
  std::vector<ad::Var> vars;
  std::vector<double> coeffs;
  std::optional<ad::Var> zero;
  for (std::size_t m = 0; m < terms_.size(); ++m) {
    const std::size_t size = std::size_t{1} << containers_[m].variables.size();
    out[m].reserve(size);
    for (std::size_t c = 0; c < size; ++c) {
      vars.clear();
      coeffs.clear();
      for (const auto& term : terms_[m]) {
        if (!active[term.slot]) continue;
        vars.push_back(alpha_vars[term.slot]);
        coeffs.push_back(bfg.factor(term.fn).log_values[term.projection[c]]);
      }
      if (vars.empty()) {
        if (!zero) zero = tape.constant(0.0);
        out[m].push_back(*zero);
      } else {
        out[m].push_back(tape.linear(vars, coeffs));
      }
    }
  }
  return out;
}

std::vector<std::vector<int>> ClusterPlan::support(const FactorGraph& bfg, const Alphas& alphas) const {
  std::vector<std::vector<int>> out(terms_.size());
  for (std::size_t m = 0; m < terms_.size(); ++m) {
    std::set<int> vars;
    for (const auto& term : terms_[m])
      if (alphas[static_cast<std::size_t>(term.fn)][static_cast<std::size_t>(term.option)] > 0.0)
        for (int v : bfg.factor(term.fn).neighbors) vars.insert(v);
    out[m].assign(vars.begin(), vars.end());
  }
  return out;
}

FactorGraph build_clustered_graph(const FactorGraph& bfg, const ContainerSet& containers,
                                  const OptionsList& options, const Alphas& alphas) {
  const ClusterPlan plan(bfg, containers, options);
  auto tables = plan.tables(bfg, alphas);
  std::vector<LocalFunction> fns;
  fns.reserve(containers.size());
  for (std::size_t m = 0; m < containers.size(); ++m)
    fns.push_back({containers[m].variables, std::move(tables[m])});
  return FactorGraph(bfg.num_variables(), std::move(fns));
}

FactorGraph apply_discrete_clustering(const FactorGraph& bfg, const ContainerSet& containers,
                                      const OptionsList& options, std::span<const int> assignment) {
  if (static_cast<int>(assignment.size()) != bfg.num_factors())
    throw std::invalid_argument("apply_discrete_clustering: one container per basis factor required");
  std::vector<std::vector<int>> members(containers.size());
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    const auto& opts = options.at(i);
    if (std::find(opts.begin(), opts.end(), assignment[i]) == opts.end())
      throw std::invalid_argument("apply_discrete_clustering: container " + std::to_string(assignment[i]) +
                                  " is not an option of factor " + std::to_string(i));
    members[static_cast<std::size_t>(assignment[i])].push_back(static_cast<int>(i));
  }

  std::vector<LocalFunction> fns;
  std::vector<std::vector<int>> support;
  std::vector<Symbol> assign(static_cast<std::size_t>(bfg.num_variables()), 1);
  for (std::size_t m = 0; m < containers.size(); ++m) {
    const auto& vars = containers[m].variables;
    LocalFunction fn{vars, std::vector<double>(std::size_t{1} << vars.size(), 0.0)};
    std::set<int> used;
    for (std::size_t c = 0; c < fn.log_values.size(); ++c) {
      for (std::size_t b = 0; b < vars.size(); ++b) assign[static_cast<std::size_t>(vars[b])] = config_value(c, static_cast<int>(b));
      for (int i : members[m]) {
        const auto& f = bfg.factor(i);
        std::size_t idx = 0;
        for (std::size_t b = 0; b < f.neighbors.size(); ++b)
          if (assign[static_cast<std::size_t>(f.neighbors[b])] < 0) idx |= std::size_t{1} << b;
        fn.log_values[c] += f.log_values[idx];
      }
    }
    for (int i : members[m]) used.insert(bfg.factor(i).neighbors.begin(), bfg.factor(i).neighbors.end());
    fns.push_back(std::move(fn));
    support.emplace_back(used.begin(), used.end());
  }
  return simplify(FactorGraph(bfg.num_variables(), std::move(fns)), support).graph;
}

ClusterWeights prune(const ClusterWeights& weights, double threshold) {
  if (!(threshold >= 0.0 && threshold < 1.0)) throw std::invalid_argument("prune: threshold must lie in [0, 1)");
  const Alphas alphas = compute_alphas(weights);
  ClusterWeights out = weights;
  for (std::size_t i = 0; i < out.beta.size(); ++i) {
    bool any_left = false;
    for (std::size_t j = 0; j < out.beta[i].size(); ++j) {
      if (!out.masked(i, j) && alphas[i][j] < threshold) out.mask[i][j] = 1;
      if (out.masked(i, j))
        out.beta[i][j] = -std::numeric_limits<double>::infinity();
      else
        any_left = true;
    }
    if (!any_left)
      throw std::invalid_argument("prune: threshold would remove every option of factor " + std::to_string(i));
  }
  return out;
}

SimplifiedGraph simplify(const FactorGraph& graph, std::span<const std::vector<int>> support) {
  if (static_cast<int>(support.size()) != graph.num_factors())
    throw std::invalid_argument("simplify: one support set per factor required");
  SimplifiedGraph out;
  std::vector<LocalFunction> fns;
  for (int f = 0; f < graph.num_factors(); ++f) {
    const auto& fn = graph.factor(f);
    const auto& keep = support[static_cast<std::size_t>(f)];
    if (keep.empty()) continue;
    std::vector<int> positions;
    for (int v : keep) {
      const auto it = std::lower_bound(fn.neighbors.begin(), fn.neighbors.end(), v);
      if (it == fn.neighbors.end() || *it != v)
        throw std::invalid_argument("simplify: support variable " + std::to_string(v) + " is not a neighbor of factor " +
                                    std::to_string(f));
      positions.push_back(static_cast<int>(it - fn.neighbors.begin()));
    }
    std::sort(positions.begin(), positions.end());
    positions.erase(std::unique(positions.begin(), positions.end()), positions.end());

    LocalFunction reduced;
    for (int p : positions) reduced.neighbors.push_back(fn.neighbors[static_cast<std::size_t>(p)]);
    reduced.log_values.resize(std::size_t{1} << positions.size());
    for (std::size_t c = 0; c < reduced.log_values.size(); ++c) {
      std::size_t full = 0;
      for (std::size_t b = 0; b < positions.size(); ++b) full |= ((c >> b) & 1u) << positions[b];
      reduced.log_values[c] = fn.log_values[full];
    }
    // Every dropped axis must leave the table unchanged.
    for (std::size_t c = 0; c < fn.log_values.size(); ++c) {
      std::size_t sub = 0;
      for (std::size_t b = 0; b < positions.size(); ++b) sub |= ((c >> positions[b]) & 1u) << b;
      const double expected = reduced.log_values[sub];
      if (std::abs(fn.log_values[c] - expected) > 1e-9 * (1.0 + std::abs(expected)))
        throw std::logic_error("simplify: factor " + std::to_string(f) + " depends on a dropped variable");
    }
    fns.push_back(std::move(reduced));
    out.origin.push_back(f);
    out.edge_origin.push_back(positions);
  }
  out.graph = FactorGraph(graph.num_variables(), std::move(fns));
  return out;
}

std::vector<double> relevance(const Alphas& alphas, const AssignmentMap& map) {
  std::vector<double> out(map.size(), 0.0);
  for (std::size_t m = 0; m < map.size(); ++m)
    for (const auto& comp : map[m])
      out[m] = std::max(out[m], alphas.at(static_cast<std::size_t>(comp.fn)).at(static_cast<std::size_t>(comp.option)));
  return out;
}

}  // namespace fgc
