#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "fgc/evaluate.hpp"
#include "fgc/spa.hpp"
#include "oracles.hpp"

using namespace fgc;

namespace {

SweepConfig quick_sweep(std::uint64_t seed, int K = 32) {
  SweepConfig c;
  c.block_length = K;
  c.seed = seed;
  c.stop.min_errors = 50;
  c.stop.max_bits = 200'000;
  c.stop.blocks_per_round = 16;
  return c;
}

}  // namespace

TEST_CASE("brute-force MAP") {
  SUBCASE("memoryless channel gives the logistic posterior") {
    const ChannelSpec ch({1.0});
    RandomStream r(1, 0);
    const auto y = transmit(sample_symbols(6, r), ch, 0.3, r);
    const auto m = map_marginals_bruteforce(ch, y);
    for (int k = 0; k < 6; ++k) CHECK(m[k] == doctest::Approx(sigmoid(2 * y.samples[k] / 0.3)).epsilon(1e-12));
  }
  SUBCASE("huge noise gives one half") {
    RandomStream r(2, 0);
    auto y = transmit(sample_symbols(8, r), ChannelSpec::reference(), 1e8, r);
    for (auto& v : y.samples) v = 0.0;
    for (double m : map_marginals_bruteforce(ChannelSpec::reference(), y)) CHECK(m == doctest::Approx(0.5));
  }
  SUBCASE("agrees with the exhaustive FFG oracle") {
    const ChannelSpec ch = ChannelSpec::reference();
    RandomStream r(3, 0);
    const auto y = transmit(sample_symbols(9, r), ch, 0.4, r);
    const auto m = map_marginals_bruteforce(ch, y);
    const auto want = oracle::marginals(build_ffg(ch, y));
    for (int k = 0; k < 9; ++k) CHECK(std::abs(m[k] - want[static_cast<std::size_t>(k)]) < 1e-12);
  }
  SUBCASE("too long") {
    RandomStream r(4, 0);
    const auto y = transmit(sample_symbols(21, r), ChannelSpec::reference(), 0.4, r);
    CHECK_THROWS_AS(map_marginals_bruteforce(ChannelSpec::reference(), y), std::invalid_argument);
  }
}

TEST_CASE("detectors") {
  const ChannelSpec ch = ChannelSpec::reference();
  RandomStream r(5, 0);
  const auto y = transmit(sample_symbols(10, r), ch, 0.5, r);
  CHECK(Detector::ufg(ch, 10).marginals(y) == run_spa(build_ufg(ch, y), {10, false}));
  CHECK(Detector::ffg(ch, 10).marginals(y) == run_spa(build_ffg(ch, y), {10, false}));
  CHECK(Detector::map_bruteforce(ch).marginals(y) == map_marginals_bruteforce(ch, y));
  CHECK(Detector::ufg(ch, 10).name() == "ufg");
  auto model = ClusterModel::create(ch, 10, 3);
  CHECK_THROWS_AS(Detector::clustered(model, 10, true), std::invalid_argument);
  model.nbp = NbpWeights::ones(model.num_container_edges(), 4);
  CHECK_THROWS_AS(Detector::clustered(model, 10, true), std::invalid_argument);
  const auto nbp = Detector::clustered(model, 4, true);
  const auto plain = Detector::clustered(model, 4, false);
  const auto a = nbp.marginals(y), b = plain.marginals(y);
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k] == doctest::Approx(b[k]).epsilon(1e-12));
  RandomStream r2(6, 0);
  const auto y_short = transmit(sample_symbols(8, r2), ch, 0.5, r2);
  CHECK_THROWS_AS(plain.marginals(y_short), std::invalid_argument);
}

TEST_CASE("sweep is identical serial and parallel, and reproducible") {
  const auto det = Detector::ffg(ChannelSpec::reference(), 5);
  const std::vector<double> grid{0.0, 4.0};
  const auto cfg = quick_sweep(7);
  const auto p = ber_sweep(det, grid, cfg);
  const auto s = ber_sweep_serial(det, grid, cfg);
  REQUIRE(p.size() == 2);
  for (std::size_t i = 0; i < p.size(); ++i) {
    CHECK(p[i].bits == s[i].bits);
    CHECK(p[i].errors == s[i].errors);
    CHECK(p[i].ber == s[i].ber);
    CHECK(p[i].esn0_db == grid[i]);
    CHECK((p[i].errors >= cfg.stop.min_errors || p[i].bits >= cfg.stop.max_bits));
    CHECK(p[i].bits % (static_cast<std::uint64_t>(cfg.stop.blocks_per_round) * 32) == 0);
  }
  CHECK(ber_sweep(det, grid, cfg)[1].errors == p[1].errors);
}

TEST_CASE("noiseless FFG makes no errors") {
  auto cfg = quick_sweep(8, 64);
  cfg.stop.max_bits = 100'000;
  const std::vector<double> grid{60.0};
  const auto rec = ber_sweep(Detector::ffg(ChannelSpec::reference(), 10), grid, cfg);
  CHECK(rec[0].errors == 0);
  CHECK(rec[0].bits >= 100'000);
}

TEST_CASE("memoryless BER follows the Gaussian tail") {
  auto cfg = quick_sweep(9, 64);
  cfg.stop.min_errors = 400;
  cfg.stop.max_bits = 2'000'000;
  const std::vector<double> grid{2.0, 5.0};
  const auto rec = ber_sweep(Detector::ffg(ChannelSpec({1.0}), 1), grid, cfg);
  for (const auto& r : rec) {
    const double want = q_function(std::sqrt(2.0 * std::pow(10.0, r.esn0_db / 10.0)));
    CAPTURE(r.esn0_db);
    CHECK(std::abs(r.ber - want) <= 3.0 * r.ci95);
  }
}

TEST_CASE("confidence intervals of independent sweeps overlap") {
  std::vector<BerRecord> recs;
  const std::vector<double> grid{3.0};
  for (std::uint64_t s = 0; s < 12; ++s) {
    auto cfg = quick_sweep(100 + s, 64);
    cfg.stop.min_errors = 200;
    recs.push_back(ber_sweep(Detector::ffg(ChannelSpec({1.0}), 1), grid, cfg)[0]);
  }
  int pairs = 0, overlap = 0;
  for (std::size_t i = 0; i < recs.size(); ++i)
    for (std::size_t j = i + 1; j < recs.size(); ++j) {
      ++pairs;
      overlap += std::abs(recs[i].ber - recs[j].ber) <= recs[i].ci95 + recs[j].ci95;
    }
  CHECK(overlap >= 0.9 * pairs);
}

TEST_CASE("helpers") {
  CHECK(q_function(0.0) == doctest::Approx(0.5));
  CHECK(q_function(1.0) == doctest::Approx(0.15865525393145707).epsilon(1e-12));
  CHECK(ber_ci95(0, 100) == 0.0);
  CHECK(ber_ci95(50, 100) == doctest::Approx(1.96 * 0.05));
  CHECK(parse_esn0_list("0:2:12") == std::vector<double>{0, 2, 4, 6, 8, 10, 12});
  CHECK(parse_esn0_list("10") == std::vector<double>{10});
  CHECK(parse_esn0_list("1.5,3,-2") == std::vector<double>{1.5, 3, -2});
  CHECK(parse_esn0_list("0:0.5:1").size() == 3);
  CHECK_THROWS_AS(parse_esn0_list(""), std::invalid_argument);
  CHECK_THROWS_AS(parse_esn0_list("a"), std::invalid_argument);
  CHECK_THROWS_AS(parse_esn0_list("0:0:4"), std::invalid_argument);
  CHECK_THROWS_AS(parse_esn0_list("4:1:0"), std::invalid_argument);
  CHECK_THROWS_AS(parse_esn0_list("0:1"), std::invalid_argument);
  const std::vector<BerRecord> rows{{10.0, 1000, 3, 0.003, ber_ci95(3, 1000)}};
  const auto csv = ber_csv(rows);
  CHECK(csv.rfind("esn0_db,bits,errors,ber,ci95\n", 0) == 0);
  CHECK(csv.find("10,1000,3,") != std::string::npos);
}

TEST_CASE("model analysis") {
  const ChannelSpec ch = ChannelSpec::reference();
  SUBCASE("uniform logits prune nothing") {
    const auto model = ClusterModel::create(ch, 16, 3);
    const auto a = analyze_model(model, 0.01);
    CHECK(a.total_containers == static_cast<int>(model.containers.size()));
    CHECK(a.pruned_containers == 0);
    int total = 0;
    for (int c : a.histogram) total += c;
    CHECK(total == a.total_containers);
    CHECK(relevance_histogram_csv(a).rfind("bin_lo,bin_hi,count,fraction\n", 0) == 0);
    CHECK(degree_table_csv(a, 3).rfind("degree,1,2,3,pruned\npercent,", 0) == 0);
  }
  SUBCASE("one-hot logits give relevances in {0, 1}") {
    auto model = ClusterModel::create(ch, 16, 4);
    RandomStream r(10, 0);
    for (std::size_t i = 0; i < model.options.size(); ++i) {
      const std::size_t pick = r.next_u32() % model.options[i].size();
      for (std::size_t j = 0; j < model.options[i].size(); ++j) {
        model.weights.mask[i][j] = j != pick;
        model.weights.beta[i][j] = j == pick ? 0.0 : -std::numeric_limits<double>::infinity();
      }
    }
    const auto a = analyze_model(model, 0.0);
    int used = 0;
    for (double v : a.relevances) {
      CHECK((v == 0.0 || v == 1.0));
      used += v == 1.0;
    }
    CHECK(a.pruned_containers == a.total_containers - used);
    int counted = a.pruned_containers;
    for (const auto& [deg, n] : a.degree_counts) counted += n;
    CHECK(counted == a.total_containers);
  }
  SUBCASE("prune_model keeps NBP weights and masks small alphas") {
    auto model = ClusterModel::create(ch, 16, 3);
    RandomStream r(11, 0);
    model.weights = ClusterWeights::random_normal(model.options, r);
    for (auto& row : model.weights.beta)
      for (auto& v : row) v *= 4;
    model.nbp = NbpWeights::ones(model.num_container_edges(), 2);
    const auto pruned = prune_model(model, 0.01);
    CHECK(pruned.nbp == model.nbp);
    CHECK(pruned.weights == prune(model.weights, 0.01));
    CHECK(analyze_model(pruned, 0.0).pruned_containers == analyze_model(model, 0.01).pruned_containers);
  }
}
