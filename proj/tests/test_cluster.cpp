#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "fgc/cluster.hpp"
#include "fgc/cluster_model.hpp"
#include "fgc/evaluate.hpp"
#include "fgc/spa.hpp"
#include "oracles.hpp"

using namespace fgc;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

FactorGraph ufg_for(const ChannelSpec& ch, int K, double var, std::uint64_t seed) {
  RandomStream r(seed, 0);
  return build_ufg(ch, transmit(sample_symbols(K, r), ch, var, r));
}

std::vector<std::vector<int>> variable_sets(const ContainerSet& cs) {
  std::vector<std::vector<int>> out;
  for (const auto& c : cs.containers) out.push_back(c.variables);
  return out;
}

double global_spread(const FactorGraph& a, const FactorGraph& b) {
  return oracle::difference_spread(
      a.num_variables(), [&](const std::vector<Symbol>& x) { return global_log_function(a, x); },
      [&](const std::vector<Symbol>& x) { return global_log_function(b, x); });
}

}  // namespace

TEST_CASE("cyclic span") {
  const std::vector<int> a{0, 1}, b{0, 7}, c{2}, d{0, 4}, e{1, 3, 6};
  CHECK(cyclic_span(a, 8) == 1);
  CHECK(cyclic_span(b, 8) == 1);
  CHECK(cyclic_span(c, 8) == 0);
  CHECK(cyclic_span(d, 8) == 4);
  CHECK(cyclic_span(e, 8) == oracle::span_by_windows(e, 8));
  for (unsigned long m = 1; m < 512; ++m) {
    std::vector<int> vars;
    for (int v = 0; v < 9; ++v)
      if ((m >> v) & 1ul) vars.push_back(v);
    CHECK(cyclic_span(vars, 9) == oracle::span_by_windows(vars, 9));
  }
}

TEST_CASE("enumerate_containers matches exhaustive subset scans") {
  SUBCASE("adjacent pairs of Z_5") {
    const auto cs = enumerate_containers(5, 0, 2);
    CHECK(variable_sets(cs) == std::vector<std::vector<int>>{{0, 1}, {1, 2}, {2, 3}, {3, 4}, {0, 4}});
  }
  for (int K : {6, 7, 8, 9, 12}) {
    for (int L : {1, 2, 4}) {
      for (int d = 2; d <= std::min(4, L + 2); ++d) {
        if (K < L + 2) continue;
        CAPTURE(K);
        CAPTURE(L);
        CAPTURE(d);
        const auto cs = enumerate_containers(K, L, d);
        auto got = variable_sets(cs);
        auto want = oracle::subsets_with_span(K, d, L + 1);
        std::sort(want.begin(), want.end());
        CHECK(got.size() == want.size());
        std::sort(got.begin(), got.end());
        CHECK(got == want);
        for (const auto& c : cs.containers) {
          CHECK(c.span == oracle::span_by_windows(c.variables, K));
          CHECK(c.span <= L + 1);
        }
      }
    }
  }
  SUBCASE("pairs on a long block") {
    CHECK(enumerate_containers(12, 2, 2).size() == 12 * 3);
    CHECK(enumerate_containers(40, 3, 2).size() == 40 * 4);
  }
  SUBCASE("reference sizes") {
    CHECK(enumerate_containers(64, 4, 3).size() == 640);
    CHECK(enumerate_containers(64, 4, 4).size() == 640);
  }
  CHECK_THROWS_AS(enumerate_containers(8, 4, 7), std::invalid_argument);
  CHECK_THROWS_AS(enumerate_containers(8, 4, 1), std::invalid_argument);
  CHECK_THROWS_AS(enumerate_containers(5, 4, 3), std::invalid_argument);
}

TEST_CASE("container order is canonical") {
  const auto cs = enumerate_containers(10, 2, 3);
  std::set<std::vector<int>> unique;
  for (std::size_t m = 0; m < cs.size(); ++m) {
    unique.insert(cs[m].variables);
    CHECK(std::is_sorted(cs[m].variables.begin(), cs[m].variables.end()));
    if (m > 0) {
      const auto& p = cs[m - 1];
      CHECK((p.window_start < cs[m].window_start ||
             (p.window_start == cs[m].window_start && p.variables < cs[m].variables)));
    }
  }
  CHECK(unique.size() == cs.size());
}

TEST_CASE("clustering_options agree with a quadratic scan") {
  const ChannelSpec ch = ChannelSpec::reference();
  const FactorGraph g = ufg_for(ch, 8, 0.5, 1);
  for (int d : {3, 4}) {
    const auto cs = enumerate_containers(8, 4, d);
    const auto opts = clustering_options(g, cs);
    REQUIRE(opts.size() == static_cast<std::size_t>(g.num_factors()));
    for (int f = 0; f < g.num_factors(); ++f) {
      std::vector<int> want;
      for (std::size_t m = 0; m < cs.size(); ++m) {
        const auto& vars = cs[m].variables;
        bool inside = true;
        for (int v : g.factor(f).neighbors) inside = inside && std::count(vars.begin(), vars.end(), v) == 1;
        if (inside) want.push_back(static_cast<int>(m));
      }
      CHECK(opts[static_cast<std::size_t>(f)] == want);
    }
  }
  SUBCASE("a pair factor on x6, x7 goes exactly to containers holding both") {
    const auto cs = enumerate_containers(16, 4, 3);
    const FactorGraph pair(16, {{{6, 7}, {0, 0, 0, 0}}});
    const auto opts = clustering_options(pair, cs);
    CHECK(opts[0].size() == 8);
    for (int m : opts[0]) {
      const auto& v = cs[static_cast<std::size_t>(m)].variables;
      CHECK(std::count(v.begin(), v.end(), 6) == 1);
      CHECK(std::count(v.begin(), v.end(), 7) == 1);
    }
  }
  SUBCASE("unplaceable factor is rejected") {
    const auto cs = enumerate_containers(16, 1, 2);
    const FactorGraph far(16, {{{0, 5}, {0, 0, 0, 0}}});
    CHECK_THROWS_AS(clustering_options(far, cs), std::invalid_argument);
  }
}

TEST_CASE("compute_alphas") {
  ClusterWeights w;
  w.beta = {{0, 0, 0}, {std::log(2.0), 0}, {50.0, -kInf, -kInf}};
  w.mask = {{0, 0, 0}, {0, 0}, {0, 1, 1}};
  const auto a = compute_alphas(w);
  for (double v : a[0]) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(a[1][0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(a[1][1] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(a[2] == std::vector<double>{1.0, 0.0, 0.0});
  w.mask[1] = {1, 1};
  CHECK_THROWS_AS(compute_alphas(w), std::invalid_argument);
}

TEST_CASE("alphas are normalized before and after pruning") {
  const ChannelSpec ch = ChannelSpec::reference();
  const auto model = ClusterModel::create(ch, 16, 4);
  RandomStream r(2, 0);
  auto w = ClusterWeights::random_normal(model.options, r);
  for (auto& b : w.beta)
    for (auto& v : b) v *= 3;
  for (const auto& weights : {w, prune(w, 0.01), prune(w, 0.05)}) {
    for (const auto& a : compute_alphas(weights)) {
      double s = 0.0;
      for (double v : a) s += v;
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("clustered graph preserves the global function") {
  const ChannelSpec ch = ChannelSpec::reference();
  for (std::uint64_t s = 0; s < 10; ++s) {
    const FactorGraph g = ufg_for(ch, 8 + static_cast<int>(s % 3), 0.5, s);
    const int K = g.num_variables();
    for (int d : {3, 4}) {
      const auto cs = enumerate_containers(K, 4, d);
      const auto opts = clustering_options(g, cs);
      RandomStream r(3, s);
      auto w = ClusterWeights::random_normal(opts, r);
      for (auto& b : w.beta)
        for (auto& v : b) v *= 2;
      const auto a = compute_alphas(w);
      CHECK(global_spread(build_clustered_graph(g, cs, opts, a), g) < 1e-9);
      const auto pw = prune(w, 0.05);
      CHECK(global_spread(build_clustered_graph(g, cs, opts, compute_alphas(pw)), g) < 1e-9);
    }
  }
}

TEST_CASE("clustered graph tables equal the plan composition") {
  const ChannelSpec ch = ChannelSpec::reference();
  const FactorGraph g = ufg_for(ch, 10, 0.5, 4);
  const auto cs = enumerate_containers(10, 4, 3);
  const auto opts = clustering_options(g, cs);
  RandomStream r(4, 0);
  auto w = ClusterWeights::random_normal(opts, r);
  const auto a = compute_alphas(w);
  auto a0 = a;
  a0[3][1] += a0[3][0];
  a0[3][0] = 0.0;
  const auto t1 = build_clustered_graph(g, cs, opts, a0);
  const ClusterPlan plan(g, cs, opts);
  const auto tables = plan.tables(g, a0);
  for (std::size_t m = 0; m < cs.size(); ++m) CHECK(tables[m] == t1.factor(static_cast<int>(m)).log_values);
}

TEST_CASE("tape composition equals the double composition") {
  const ChannelSpec ch = ChannelSpec::reference();
  const FactorGraph g = ufg_for(ch, 12, 0.5, 5);
  const auto cs = enumerate_containers(12, 4, 4);
  const auto opts = clustering_options(g, cs);
  const ClusterPlan plan(g, cs, opts);
  RandomStream r(5, 0);
  const auto a = compute_alphas(ClusterWeights::random_normal(opts, r));
  ad::Tape t;
  std::vector<ad::Var> vars(plan.num_slots());
  std::vector<std::uint8_t> active(plan.num_slots(), 1);
  for (int f = 0; f < g.num_factors(); ++f)
    for (std::size_t j = 0; j < opts[static_cast<std::size_t>(f)].size(); ++j)
      vars[plan.slot(f, static_cast<int>(j))] = t.input(a[static_cast<std::size_t>(f)][j]);
  const auto tt = plan.tables(t, g, vars, active);
  const auto td = plan.tables(g, a);
  for (std::size_t m = 0; m < td.size(); ++m)
    for (std::size_t c = 0; c < td[m].size(); ++c) CHECK(t.value(tt[m][c]) == doctest::Approx(td[m][c]).epsilon(1e-13));
}

TEST_CASE("discrete clustering") {
  const ChannelSpec ch = ChannelSpec::reference();
  SUBCASE("merging two pair factors sums their extended tables") {
    const FactorGraph g(6, {{{0, 1}, {0.1, 0.2, 0.3, 0.4}}, {{1, 2}, {-1.0, 0.5, 2.0, 0.0}}});
    const auto cs = enumerate_containers(6, 1, 3);
    const auto opts = clustering_options(g, cs);
    int target = -1;
    for (std::size_t m = 0; m < cs.size(); ++m)
      if (cs[m].variables == std::vector<int>{0, 1, 2}) target = static_cast<int>(m);
    REQUIRE(target >= 0);
    const std::vector<int> assignment{target, target};
    const FactorGraph out = apply_discrete_clustering(g, cs, opts, assignment);
    REQUIRE(out.num_factors() == 1);
    const auto& f = out.factor(0);
    CHECK(f.neighbors == std::vector<int>{0, 1, 2});
    for (std::size_t c = 0; c < 8; ++c) {
      const std::size_t i01 = c & 3u, i12 = (c >> 1) & 3u;
      CHECK(f.log_values[c] == doctest::Approx(g.factor(0).log_values[i01] + g.factor(1).log_values[i12]));
    }
  }
  SUBCASE("assignment outside the options is rejected") {
    const FactorGraph g(6, {{{0, 1}, {0, 0, 0, 0}}});
    const auto cs = enumerate_containers(6, 1, 3);
    const auto opts = clustering_options(g, cs);
    int outside = -1;
    for (std::size_t m = 0; m < cs.size() && outside < 0; ++m)
      if (std::count(cs[m].variables.begin(), cs[m].variables.end(), 0) == 0) outside = static_cast<int>(m);
    const std::vector<int> bad{outside};
    CHECK_THROWS_AS(apply_discrete_clustering(g, cs, opts, bad), std::invalid_argument);
  }
  SUBCASE("identity-like assignment keeps the marginals") {
    // Pair factors each in its own container, unaries on top of distinct pairs.
    const ChannelSpec c2({1.0, 0.5});
    const FactorGraph g = ufg_for(c2, 8, 0.5, 6);
    const auto cs = enumerate_containers(8, 1, 2, 1);
    const auto opts = clustering_options(g, cs);
    std::vector<int> assignment;
    for (int f = 0; f < g.num_factors(); ++f) assignment.push_back(opts[static_cast<std::size_t>(f)][0]);
    const FactorGraph out = apply_discrete_clustering(g, cs, opts, assignment);
    CHECK(global_spread(out, g) < 1e-9);
  }
  SUBCASE("window clustering of the UFG reproduces the FFG") {
    // K = 8, L = 2, containers of degree L+1: F_k goes to {k-L..k}, I_{l,k} to {k..k+L}.
    const ChannelSpec c3({0.6, -0.3, 0.45});
    RandomStream r(7, 0);
    const auto y = transmit(sample_symbols(8, r), c3, 0.5, r);
    const FactorGraph u = build_ufg(c3, y);
    const auto cs = enumerate_containers(8, 2, 3, 2);
    const auto opts = clustering_options(u, cs);
    auto window = [&](int start) {
      std::vector<int> v{start % 8, (start + 1) % 8, (start + 2) % 8};
      std::sort(v.begin(), v.end());
      for (std::size_t m = 0; m < cs.size(); ++m)
        if (cs[m].variables == v) return static_cast<int>(m);
      return -1;
    };
    std::vector<int> assignment;
    for (const auto& f : u.factors()) {
      if (f.degree() == 1) {
        assignment.push_back(window(f.neighbors[0] + 8 - 2));
      } else {
        const int a = f.neighbors[0], b = f.neighbors[1];
        const int first = (b - a <= 2) ? a : b;  // start of the cyclic pair
        assignment.push_back(window(first));
      }
    }
    const FactorGraph out = apply_discrete_clustering(u, cs, opts, assignment);
    CHECK(fn_degree_histogram(out) == std::map<int, int>{{3, 8}});
    CHECK(global_spread(out, build_ffg(c3, y)) < 1e-9);
  }
}

TEST_CASE("one-hot continuous clustering equals discrete clustering") {
  const ChannelSpec ch = ChannelSpec::reference();
  for (std::uint64_t s = 0; s < 20; ++s) {
    RandomStream r(8, s);
    ClusterModel model = ClusterModel::create(ch, 8, s % 2 ? 4 : 3);
    const auto y = transmit(sample_symbols(8, r), ch, 0.5, r);
    const FactorGraph u = build_ufg(ch, y);
    std::vector<int> assignment;
    for (std::size_t i = 0; i < model.options.size(); ++i) {
      const std::size_t pick = r.next_u32() % model.options[i].size();
      assignment.push_back(model.options[i][pick]);
      for (std::size_t j = 0; j < model.options[i].size(); ++j) {
        model.weights.mask[i][j] = j != pick;
        model.weights.beta[i][j] = j == pick ? 1.0 : -kInf;
      }
    }
    const auto discrete = apply_discrete_clustering(u, model.containers, model.options, assignment);
    const auto cc = clustered_instance(model, y, false).simplified.graph;
    const auto a = run_spa(discrete, {10, false});
    const auto b = run_spa(cc, {10, false});
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(std::abs(a[k] - b[k]) < 1e-12);
  }
}

TEST_CASE("prune") {
  ClusterWeights w;
  w.beta = {{std::log(0.005), std::log(0.995)}, {0.0, 0.0}};
  w.mask = {{0, 0}, {0, 0}};
  const auto p = prune(w, 0.01);
  CHECK(p.mask[0] == std::vector<std::uint8_t>{1, 0});
  CHECK(compute_alphas(p)[0] == std::vector<double>{0.0, 1.0});
  CHECK(p.mask[1] == std::vector<std::uint8_t>{0, 0});
  CHECK(prune(w, 0.0) == w);
  CHECK_THROWS_AS(prune(w, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(prune(w, -0.1), std::invalid_argument);
  ClusterWeights flat;
  flat.beta = {{0, 0, 0, 0}};
  flat.mask = {{0, 0, 0, 0}};
  CHECK_THROWS_AS(prune(flat, 0.3), std::invalid_argument);
}

TEST_CASE("simplify") {
  SUBCASE("a pair component inside a degree-4 container shrinks to degree 2") {
    std::vector<double> table(16);
    for (std::size_t c = 0; c < 16; ++c) table[c] = (c & 1u ? 0.3 : -0.2) + (c & 2u ? 1.0 : 0.0);
    const FactorGraph g(5, {{{0, 1, 2, 3}, table}, {{2, 3}, {1, 2, 3, 4}}});
    const std::vector<std::vector<int>> support{{0, 1}, {}};
    const auto s = simplify(g, support);
    REQUIRE(s.graph.num_factors() == 1);
    CHECK(s.graph.factor(0).neighbors == std::vector<int>{0, 1});
    CHECK(s.graph.factor(0).log_values == std::vector<double>{-0.2, 0.3, 0.8, 1.3});
    CHECK(s.origin == std::vector<int>{0});
    CHECK(s.edge_origin == std::vector<std::vector<int>>{{0, 1}});
  }
  SUBCASE("non-constant dropped axis is an internal error") {
    const FactorGraph g(2, {{{0, 1}, {0.0, 1.0, 2.0, 3.0}}});
    const std::vector<std::vector<int>> support{{0}};
    CHECK_THROWS_AS(simplify(g, support), std::logic_error);
  }
  SUBCASE("preserves the global function and is idempotent") {
    const ChannelSpec ch = ChannelSpec::reference();
    ClusterModel model = ClusterModel::create(ch, 9, 4);
    RandomStream r(9, 0);
    auto w = ClusterWeights::random_normal(model.options, r);
    for (auto& b : w.beta)
      for (auto& v : b) v *= 4;
    model.weights = prune(w, 0.02);
    const auto y = transmit(sample_symbols(9, r), ch, 0.5, r);
    const FactorGraph u = build_ufg(ch, y);
    const auto a = compute_alphas(model.weights);
    const FactorGraph full = build_clustered_graph(u, model.containers, model.options, a);
    const ClusterPlan plan(u, model.containers, model.options);
    const auto support = plan.support(u, a);
    const auto s = simplify(full, support);
    CHECK(s.graph.num_factors() < full.num_factors());
    CHECK(global_spread(s.graph, u) < 1e-9);
    std::vector<std::vector<int>> again;
    for (const auto& f : s.graph.factors()) again.push_back(f.neighbors);
    CHECK(simplify(s.graph, again).graph == s.graph);
  }
}

TEST_CASE("relevance") {
  const Alphas a{{0.2, 0.8}, {0.7, 0.3}};
  const OptionsList opts{{0, 1}, {0, 2}};
  const auto map = assignment_map(opts, 4);
  const auto rel = relevance(a, map);
  CHECK(rel == std::vector<double>{0.7, 0.8, 0.3, 0.0});
  CHECK(map[0] == std::vector<Component>{{0, 0}, {1, 0}});
  CHECK(map[3].empty());
}
