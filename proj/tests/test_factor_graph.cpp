#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "fgc/factor_graph.hpp"
#include "oracles.hpp"

using namespace fgc;

namespace {

ObservationBlock noisy(const ChannelSpec& ch, int K, double var, std::uint64_t seed) {
  RandomStream r(seed, 0);
  return transmit(sample_symbols(K, r), ch, var, r);
}

}  // namespace

TEST_CASE("config index round trip") {
  for (int d = 0; d <= 6; ++d)
    for (std::size_t c = 0; c < (std::size_t{1} << d); ++c) {
      std::vector<Symbol> x;
      for (int b = 0; b < d; ++b) x.push_back(config_value(c, b));
      CHECK(config_index(x) == c);
    }
  CHECK(config_value(0, 0) == 1);
  CHECK(config_value(1, 0) == -1);
}

TEST_CASE("factor graph validation") {
  CHECK_THROWS_AS(FactorGraph(2, {{{1, 0}, {0, 0, 0, 0}}}), std::invalid_argument);
  CHECK_THROWS_AS(FactorGraph(2, {{{0, 0}, {0, 0, 0, 0}}}), std::invalid_argument);
  CHECK_THROWS_AS(FactorGraph(2, {{{0, 2}, {0, 0, 0, 0}}}), std::invalid_argument);
  CHECK_THROWS_AS(FactorGraph(2, {{{0, 1}, {0, 0, 0}}}), std::invalid_argument);
  CHECK_NOTHROW(FactorGraph(2, {{{0, 1}, {0, 0, 0, 0}}}));
}

TEST_CASE("compute_q") {
  CHECK(compute_q(ChannelSpec({1.0}), 4) == std::vector<double>{1.0});
  const auto q = compute_q(ChannelSpec::reference(), 64);
  REQUIRE(q.size() == 5);
  // Independent sums of products of the taps.
  const std::vector<double> h{0.407, 0.100, 0.815, 0.100, 0.407};
  CHECK(q[0] == doctest::Approx(1.015523).epsilon(1e-12));
  CHECK(q[1] == doctest::Approx(0.2444).epsilon(1e-12));
  CHECK(q[2] == doctest::Approx(h[0] * h[2] + h[1] * h[3] + h[2] * h[4]).epsilon(1e-14));
  CHECK(q[3] == doctest::Approx(0.0814).epsilon(1e-12));
  CHECK(q[4] == doctest::Approx(0.165649).epsilon(1e-12));
  CHECK_THROWS_AS(compute_q(ChannelSpec::reference(), 4), std::invalid_argument);
}

TEST_CASE("build_ufg structure") {
  const ChannelSpec ch = ChannelSpec::reference();
  const auto y = noisy(ch, 8, 0.5, 1);
  const FactorGraph g = build_ufg(ch, y);
  CHECK(g.num_factors() == 40);
  CHECK(g.max_degree() == 2);
  CHECK(fn_degree_histogram(g) == std::map<int, int>{{1, 8}, {2, 32}});

  SUBCASE("identity channel has trivial pair factors") {
    const ChannelSpec id({1.0});
    const FactorGraph u = build_ufg(id, noisy(id, 5, 0.5, 2));
    CHECK(u.num_factors() == 5);
    for (const auto& f : u.factors()) CHECK(f.degree() == 1);
  }
  SUBCASE("pair factors with h=[1, 0] are all zero") {
    const ChannelSpec ch2({1.0, 0.0});
    const FactorGraph u = build_ufg(ch2, noisy(ch2, 6, 0.5, 3));
    for (const auto& f : u.factors())
      if (f.degree() == 2)
        for (double v : f.log_values) CHECK(v == 0.0);
  }
  SUBCASE("q0 term is the same offset in every unary table") {
    // log F(+1) + log F(-1) = -q0 / sigma^2 regardless of z_k.
    for (const auto& f : g.factors())
      if (f.degree() == 1) CHECK(f.log_values[0] + f.log_values[1] == doctest::Approx(-1.015523 / 0.5).epsilon(1e-12));
  }
  CHECK_THROWS_AS(build_ufg(ch, ObservationBlock{std::vector<double>(8, 0.0), 0.0}), std::invalid_argument);
  CHECK_THROWS_AS(build_ufg(ch, ObservationBlock{std::vector<double>(4, 0.0), 1.0}), std::invalid_argument);
}

TEST_CASE("build_ffg structure") {
  const ChannelSpec ch = ChannelSpec::reference();
  const FactorGraph g = build_ffg(ch, noisy(ch, 8, 0.5, 4));
  CHECK(g.num_factors() == 8);
  CHECK(g.max_degree() == 5);
  CHECK(fn_degree_histogram(g) == std::map<int, int>{{5, 8}});

  const ChannelSpec id({1.0});
  const auto y = noisy(id, 4, 0.7, 5);
  const FactorGraph m = build_ffg(id, y);
  for (int k = 0; k < 4; ++k) {
    const auto& f = m.factor(k);
    REQUIRE(f.neighbors == std::vector<int>{k});
    const double yk = y.samples[static_cast<std::size_t>(k)];
    CHECK(f.log_values[0] == doctest::Approx(-(yk - 1) * (yk - 1) / 1.4).epsilon(1e-14));
    CHECK(f.log_values[1] == doctest::Approx(-(yk + 1) * (yk + 1) / 1.4).epsilon(1e-14));
  }
}

TEST_CASE("ffg global function equals the direct channel likelihood") {
  const ChannelSpec ch = ChannelSpec::reference();
  const auto y = noisy(ch, 9, 0.4, 6);
  const FactorGraph g = build_ffg(ch, y);
  for (unsigned long c = 0; c < 512; c += 7) {
    const auto x = oracle::assignment(c, 9);
    CHECK(global_log_function(g, x) == doctest::Approx(oracle::log_likelihood(ch.taps(), y.samples, 0.4, x)).epsilon(1e-12));
  }
}

TEST_CASE("ufg and ffg differ by a constant") {
  // Block lengths down to L+1 exercise the wrap-around pairs.
  const std::vector<std::vector<double>> channels{{0.407, 0.100, 0.815, 0.100, 0.407}, {0.6, -0.3, 0.2}, {1.0, 0.5}};
  for (const auto& taps : channels) {
    const ChannelSpec ch(taps);
    for (int K = ch.memory() + 1; K <= 10; ++K) {
      CAPTURE(K);
      const auto y = noisy(ch, K, 0.6, static_cast<std::uint64_t>(K));
      const FactorGraph u = build_ufg(ch, y);
      const FactorGraph f = build_ffg(ch, y);
      const double spread = oracle::difference_spread(
          K, [&](const std::vector<Symbol>& x) { return global_log_function(u, x); },
          [&](const std::vector<Symbol>& x) { return global_log_function(f, x); });
      CHECK(spread < 1e-9);
    }
  }
}

TEST_CASE("global_log_function") {
  const std::vector<Symbol> x{1, -1};
  CHECK(global_log_function(FactorGraph(2, {}), x) == 0.0);
  const double a = 0.37;
  const FactorGraph single(1, {{{0}, {a, -a}}});
  const std::vector<Symbol> plus{1}, minus{-1};
  CHECK(global_log_function(single, plus) == a);
  CHECK(global_log_function(single, minus) == -a);
  CHECK_THROWS_AS(global_log_function(single, x), std::invalid_argument);
}

TEST_CASE("adding a constant to one table shifts the global function by it") {
  const ChannelSpec ch = ChannelSpec::reference();
  const FactorGraph g = build_ufg(ch, noisy(ch, 10, 0.5, 7));
  auto fns = g.factors();
  for (auto& v : fns[13].log_values) v += 2.5;
  const FactorGraph shifted(g.num_variables(), fns);
  for (unsigned long c = 0; c < 1024; c += 31) {
    const auto x = oracle::assignment(c, 10);
    CHECK(global_log_function(shifted, x) - global_log_function(g, x) == doctest::Approx(2.5).epsilon(1e-12));
  }
}

TEST_CASE("degree histogram of an empty graph") { CHECK(fn_degree_histogram(FactorGraph(3, {})).empty()); }

TEST_CASE("graph json round trip") {
  const ChannelSpec ch = ChannelSpec::reference();
  const FactorGraph g = build_ufg(ch, noisy(ch, 12, 0.5, 8));
  const auto doc = graph_to_json(g);
  CHECK(doc.at("vns").size() == 12);
  CHECK(doc.at("fns").size() == 60);
  CHECK(graph_from_json(nlohmann::json::parse(doc.dump())) == g);
  auto bad = doc;
  bad["fns"][0]["neighbors"] = {40};
  CHECK_THROWS(graph_from_json(bad));
}
