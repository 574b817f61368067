#include "fgc/factor_graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "json.hpp"

namespace fgc {

namespace {

void check_graph_inputs(const ChannelSpec& channel, const ObservationBlock& y) {
  const int L = channel.memory();
  if (y.size() < L + 1)
    throw std::invalid_argument("factor graph: block length " + std::to_string(y.size()) +
                                " is below L+1 = " + std::to_string(L + 1));
  if (!(y.noise_variance > 0.0))
    throw std::invalid_argument("factor graph: noise variance must be positive");
}

inline int wrap(int index, int K) { return ((index % K) + K) % K; }

}  // namespace

FactorGraph::FactorGraph(int num_variables, std::vector<LocalFunction> factors)
    : num_variables_(num_variables), factors_(std::move(factors)) {
  if (num_variables_ < 0) throw std::invalid_argument("factor graph: negative variable count");
  for (std::size_t f = 0; f < factors_.size(); ++f) {
    const auto& fn = factors_[f];
    for (std::size_t b = 0; b < fn.neighbors.size(); ++b) {
      const int v = fn.neighbors[b];
      if (v < 0 || v >= num_variables_)
        throw std::invalid_argument("factor graph: factor " + std::to_string(f) +
                                    " references unknown variable " + std::to_string(v));
      if (b > 0 && fn.neighbors[b - 1] >= v)
        throw std::invalid_argument("factor graph: neighbors of factor " + std::to_string(f) +
                                    " are not strictly ascending");
    }
    if (fn.log_values.size() != (std::size_t{1} << fn.neighbors.size()))
      throw std::invalid_argument("factor graph: table of factor " + std::to_string(f) +
                                  " does not have 2^degree entries");
  }
}

int FactorGraph::max_degree() const {
  int d = 0;
  for (const auto& fn : factors_) d = std::max(d, fn.degree());
  return d;
}

std::size_t FactorGraph::num_edges() const {
  std::size_t e = 0;
  for (const auto& fn : factors_) e += fn.neighbors.size();
  return e;
}

std::vector<double> compute_q(const ChannelSpec& channel, int block_length) {
  const int L = channel.memory();
  if (block_length < L + 1)
    throw std::invalid_argument("compute_q: block length " + std::to_string(block_length) +
                                " must be at least L+1 = " + std::to_string(L + 1));
  const auto& h = channel.taps();
  std::vector<double> q(static_cast<std::size_t>(L + 1), 0.0);
  for (int l = 0; l <= L; ++l)
    for (int i = 0; i + l <= L; ++i)
      q[static_cast<std::size_t>(l)] += h[static_cast<std::size_t>(i)] * h[static_cast<std::size_t>(i + l)];
  return q;
}

std::vector<double> matched_filter(const ChannelSpec& channel, const ObservationBlock& y) {
  const int K = y.size();
  const auto& h = channel.taps();
  std::vector<double> z(static_cast<std::size_t>(K), 0.0);
  for (int k = 0; k < K; ++k)
    for (int l = 0; l <= channel.memory(); ++l)
      z[static_cast<std::size_t>(k)] +=
          h[static_cast<std::size_t>(l)] * y.samples[static_cast<std::size_t>(wrap(k + l, K))];
  return z;
}

FactorGraph build_ufg(const ChannelSpec& channel, const ObservationBlock& y) {
  check_graph_inputs(channel, y);
  const int K = y.size();
  const int L = channel.memory();
  const double inv_var = 1.0 / y.noise_variance;
  const auto q = compute_q(channel, K);
  const auto z = matched_filter(channel, y);

  std::vector<LocalFunction> fns;
  fns.reserve(static_cast<std::size_t>(K * (L + 1)));
  for (int k = 0; k < K; ++k) {
    LocalFunction f;
    f.neighbors = {k};
    f.log_values.resize(2);
    for (std::size_t c = 0; c < 2; ++c) {
      const double x = config_value(c, 0);
      f.log_values[c] = inv_var * (z[static_cast<std::size_t>(k)] * x - 0.5 * q[0] * x * x);
    }
    fns.push_back(std::move(f));
  }
  for (int k = 0; k < K; ++k) {
    for (int l = 1; l <= L; ++l) {
      const int a = k;
      const int b = wrap(k + l, K);
      LocalFunction f;
      f.neighbors = {std::min(a, b), std::max(a, b)};
      f.log_values.resize(4);
      // The table is symmetric in its two arguments, so neighbor order is irrelevant.
      for (std::size_t c = 0; c < 4; ++c)
        f.log_values[c] = -inv_var * q[static_cast<std::size_t>(l)] * config_value(c, 0) * config_value(c, 1);
      fns.push_back(std::move(f));
    }
  }
  return FactorGraph(K, std::move(fns));
}

FactorGraph build_ffg(const ChannelSpec& channel, const ObservationBlock& y) {
  check_graph_inputs(channel, y);
  const int K = y.size();
  const int L = channel.memory();
  const auto& h = channel.taps();
  const double scale = -0.5 / y.noise_variance;

  std::vector<LocalFunction> fns;
  fns.reserve(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    LocalFunction f;
    for (int l = 0; l <= L; ++l) f.neighbors.push_back(wrap(k - l, K));
    std::sort(f.neighbors.begin(), f.neighbors.end());
    const std::size_t size = std::size_t{1} << f.neighbors.size();
    f.log_values.resize(size);
    for (std::size_t c = 0; c < size; ++c) {
      double mean = 0.0;
      for (int l = 0; l <= L; ++l) {
        const int v = wrap(k - l, K);
        const auto pos = std::lower_bound(f.neighbors.begin(), f.neighbors.end(), v) - f.neighbors.begin();
        mean += h[static_cast<std::size_t>(l)] * config_value(c, static_cast<int>(pos));
      }
      const double r = y.samples[static_cast<std::size_t>(k)] - mean;
      f.log_values[c] = scale * r * r;
    }
    fns.push_back(std::move(f));
  }
  return FactorGraph(K, std::move(fns));
}

double global_log_function(const FactorGraph& graph, std::span<const Symbol> x) {
  if (static_cast<int>(x.size()) != graph.num_variables())
    throw std::invalid_argument("global_log_function: assignment length does not match the graph");
  double total = 0.0;
  for (const auto& fn : graph.factors()) {
    std::size_t index = 0;
    for (std::size_t b = 0; b < fn.neighbors.size(); ++b)
      if (x[static_cast<std::size_t>(fn.neighbors[b])] < 0) index |= std::size_t{1} << b;
    total += fn.log_values[index];
  }
  return total;
}

std::map<int, int> fn_degree_histogram(const FactorGraph& graph) {
  std::map<int, int> hist;
  for (const auto& fn : graph.factors()) ++hist[fn.degree()];
  return hist;
}

nlohmann::json graph_to_json(const FactorGraph& graph) {
  nlohmann::json vns = nlohmann::json::array();
  for (int v = 0; v < graph.num_variables(); ++v) vns.push_back(v);
  nlohmann::json fns = nlohmann::json::array();
  for (const auto& fn : graph.factors())
    fns.push_back({{"neighbors", fn.neighbors}, {"log_values", fn.log_values}});
  return {{"vns", vns}, {"fns", fns}};
}

FactorGraph graph_from_json(const nlohmann::json& doc) {
  const auto& vns = doc.at("vns");
  const int n = static_cast<int>(vns.size());
  for (int v = 0; v < n; ++v)
    if (vns.at(static_cast<std::size_t>(v)).get<int>() != v)
      throw std::invalid_argument("graph json: variable ids must be 0..n-1 in order");
  std::vector<LocalFunction> fns;
  for (const auto& f : doc.at("fns"))
    fns.push_back({f.at("neighbors").get<std::vector<int>>(), f.at("log_values").get<std::vector<double>>()});
  return FactorGraph(n, std::move(fns));
}

}  // namespace fgc
