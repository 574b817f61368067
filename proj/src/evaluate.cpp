#include "fgc/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "fgc/spa.hpp"

namespace fgc {

std::vector<double> map_marginals_bruteforce(const ChannelSpec& channel, const ObservationBlock& y) {
  const int K = y.size();
  if (K > kMaxBruteForceLength)
    throw std::invalid_argument("map_marginals_bruteforce: block length " + std::to_string(K) + " exceeds " +
                                std::to_string(kMaxBruteForceLength));
  const FactorGraph ffg = build_ffg(channel, y);
  const std::size_t count = std::size_t{1} << K;
  std::vector<double> log_p(count);
  std::vector<Symbol> x(static_cast<std::size_t>(K));
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < count; ++c) {
    for (int k = 0; k < K; ++k) x[static_cast<std::size_t>(k)] = config_value(c, k);
    log_p[c] = global_log_function(ffg, x);
    peak = std::max(peak, log_p[c]);
  }
  double total = 0.0;
  std::vector<double> plus(static_cast<std::size_t>(K), 0.0);
  for (std::size_t c = 0; c < count; ++c) {
    const double w = std::exp(log_p[c] - peak);
    total += w;
    for (int k = 0; k < K; ++k)
      if (((c >> k) & 1u) == 0) plus[static_cast<std::size_t>(k)] += w;
  }
  for (auto& p : plus) p /= total;
  return plus;
}

namespace {

enum class Kind { Ufg, Ffg, Clustered, Map };

std::vector<std::size_t> container_edge_begin(const ClusterModel& model) {
  std::vector<std::size_t> begin{0};
  for (const auto& c : model.containers.containers) begin.push_back(begin.back() + c.variables.size());
  return begin;
}

ClusteredInstance make_instance(const ClusterModel& model, const ClusterPlan& plan, const Alphas& alphas,
                                const std::vector<std::vector<int>>& support, const ObservationBlock& y,
                                bool use_nbp) {
  const FactorGraph bfg = build_ufg(model.channel, y);
  auto tables = plan.tables(bfg, alphas);
  std::vector<LocalFunction> fns;
  fns.reserve(tables.size());
  for (std::size_t m = 0; m < tables.size(); ++m)
    fns.push_back({model.containers[m].variables, std::move(tables[m])});
  ClusteredInstance out{simplify(FactorGraph(bfg.num_variables(), std::move(fns)), support), {}};
  if (use_nbp) {
    if (!model.nbp) throw std::invalid_argument("clustered detector: model carries no NBP weights");
    const auto begin = container_edge_begin(model);
    const NbpWeights& src = *model.nbp;
    out.weights = NbpWeights::ones(out.simplified.graph.num_edges(), src.iterations);
    for (int t = 0; t < src.iterations; ++t) {
      std::size_t e = 0;
      for (std::size_t f = 0; f < out.simplified.origin.size(); ++f)
        for (int p : out.simplified.edge_origin[f])
          out.weights.at(t, e++) = src.at(t, begin[static_cast<std::size_t>(out.simplified.origin[f])] +
                                                static_cast<std::size_t>(p));
    }
  }
  return out;
}

}  // namespace

struct Detector::Impl {
  Impl(Kind k, ChannelSpec c, int iters, std::string n)
      : kind(k), channel(std::move(c)), iterations(iters), name(std::move(n)) {}

  Kind kind;
  ChannelSpec channel;
  int iterations = 0;
  std::string name;
  std::optional<ClusterModel> model;
  std::optional<ClusterPlan> plan;
  Alphas alphas;
  std::vector<std::vector<int>> support;
  bool use_nbp = false;
};

Detector Detector::ufg(ChannelSpec channel, int iterations) {
  return Detector(std::make_shared<const Impl>(Kind::Ufg, std::move(channel), iterations, "ufg"));
}

Detector Detector::ffg(ChannelSpec channel, int iterations) {
  return Detector(std::make_shared<const Impl>(Kind::Ffg, std::move(channel), iterations, "ffg"));
}

Detector Detector::map_bruteforce(ChannelSpec channel) {
  return Detector(std::make_shared<const Impl>(Kind::Map, std::move(channel), 0, "map"));
}

Detector Detector::clustered(ClusterModel model, int iterations, bool use_nbp) {
  if (use_nbp) {
    if (!model.nbp) throw std::invalid_argument("clustered detector: model carries no NBP weights");
    if (model.nbp->iterations != iterations)
      throw std::invalid_argument("clustered detector: NBP weights were trained for " +
                                  std::to_string(model.nbp->iterations) + " iterations, not " +
                                  std::to_string(iterations));
  }
  Impl impl(Kind::Clustered, model.channel, iterations,
            "cc" + std::to_string(model.degree()) + (use_nbp ? "+nbp" : ""));
  const FactorGraph structure = ufg_structure(model.channel, model.block_length());
  impl.plan.emplace(structure, model.containers, model.options);
  impl.alphas = compute_alphas(model.weights);
  impl.support = impl.plan->support(structure, impl.alphas);
  impl.use_nbp = use_nbp;
  impl.model = std::move(model);
  return Detector(std::make_shared<const Impl>(std::move(impl)));
}

const ChannelSpec& Detector::channel() const { return impl_->channel; }
const std::string& Detector::name() const { return impl_->name; }

std::vector<double> Detector::marginals(const ObservationBlock& y) const {
  const Impl& d = *impl_;
  const SpaConfig config{d.iterations, d.use_nbp};
  switch (d.kind) {
    case Kind::Ufg:
      return run_spa(build_ufg(d.channel, y), config);
    case Kind::Ffg:
      return run_spa(build_ffg(d.channel, y), config);
    case Kind::Map:
      return map_marginals_bruteforce(d.channel, y);
    case Kind::Clustered: {
      if (y.size() != d.model->block_length())
        throw std::invalid_argument("clustered detector: observation length differs from the model's K");
      const auto inst = make_instance(*d.model, *d.plan, d.alphas, d.support, y, d.use_nbp);
      return run_spa(inst.simplified.graph, config, d.use_nbp ? &inst.weights : nullptr);
    }
  }
  throw std::logic_error("detector: unknown kind");
}

ClusteredInstance clustered_instance(const ClusterModel& model, const ObservationBlock& y, bool use_nbp) {
  const FactorGraph structure = ufg_structure(model.channel, model.block_length());
  const ClusterPlan plan(structure, model.containers, model.options);
  const Alphas alphas = compute_alphas(model.weights);
  return make_instance(model, plan, alphas, plan.support(structure, alphas), y, use_nbp);
}

double q_function(double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); }

double ber_ci95(std::uint64_t errors, std::uint64_t bits) {
  if (bits == 0) return 0.0;
  const double p = static_cast<double>(errors) / static_cast<double>(bits);
  return 1.96 * std::sqrt(p * (1.0 - p) / static_cast<double>(bits));
}

namespace {

std::uint64_t block_errors(const Detector& detector, double noise_variance, int block_length, std::uint64_t seed,
                           std::uint64_t stream) {
  RandomStream rng(seed, stream);
  const SymbolBlock x = sample_symbols(block_length, rng);
  const ObservationBlock y = transmit(x, detector.channel(), noise_variance, rng);
  const SymbolBlock decided = hard_decision(detector.marginals(y));
  std::uint64_t errors = 0;
  for (int k = 0; k < block_length; ++k) errors += decided[k] != x[k];
  return errors;
}

std::vector<BerRecord> sweep(const Detector& detector, std::span<const double> esn0_db, const SweepConfig& config,
                             bool parallel) {
  if (config.stop.blocks_per_round < 1) throw std::invalid_argument("ber_sweep: blocks_per_round must be >= 1");
  std::vector<BerRecord> records;
  const auto round = static_cast<std::size_t>(config.stop.blocks_per_round);
  std::vector<std::uint64_t> errs(round);
  for (std::size_t p = 0; p < esn0_db.size(); ++p) {
    const double noise_variance = noise_variance_from_esn0(esn0_db[p]);
    BerRecord rec;
    rec.esn0_db = esn0_db[p];
    std::uint64_t next_block = 0;
    while (rec.errors < config.stop.min_errors && rec.bits < config.stop.max_bits) {
      const std::uint64_t base = (static_cast<std::uint64_t>(p) << 40) | next_block;
      if (parallel) {
        std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
        for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(round); ++b) {
          try {
            errs[static_cast<std::size_t>(b)] =
                block_errors(detector, noise_variance, config.block_length, config.seed, base + static_cast<std::uint64_t>(b));
          } catch (...) {
#pragma omp critical
            if (!failure) failure = std::current_exception();
          }
        }
        if (failure) std::rethrow_exception(failure);
      } else {
        for (std::size_t b = 0; b < round; ++b)
          errs[b] = block_errors(detector, noise_variance, config.block_length, config.seed, base + b);
      }
      for (auto e : errs) rec.errors += e;
      rec.bits += round * static_cast<std::uint64_t>(config.block_length);
      next_block += round;
    }
    rec.ber = rec.bits ? static_cast<double>(rec.errors) / static_cast<double>(rec.bits) : 0.0;
    rec.ci95 = ber_ci95(rec.errors, rec.bits);
    records.push_back(rec);
  }
  return records;
}

}  // namespace

std::vector<BerRecord> ber_sweep(const Detector& detector, std::span<const double> esn0_db, const SweepConfig& config) {
  return sweep(detector, esn0_db, config, true);
}

std::vector<BerRecord> ber_sweep_serial(const Detector& detector, std::span<const double> esn0_db,
                                        const SweepConfig& config) {
  return sweep(detector, esn0_db, config, false);
}

std::vector<double> parse_esn0_list(const std::string& text) {
  std::vector<double> out;
  auto parse = [&](const std::string& s) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != s.size()) throw std::invalid_argument("invalid Es/N0 value '" + s + "'");
    return v;
  };
  if (text.find(':') != std::string::npos) {
    std::vector<std::string> parts;
    std::stringstream ss(text);
    for (std::string item; std::getline(ss, item, ':');) parts.push_back(item);
    if (parts.size() != 3) throw std::invalid_argument("Es/N0 range must be start:step:stop");
    const double start = parse(parts[0]);
    const double step = parse(parts[1]);
    const double stop = parse(parts[2]);
    if (!(step > 0.0) || stop < start) throw std::invalid_argument("Es/N0 range needs step > 0 and stop >= start");
    const auto n = static_cast<int>(std::floor((stop - start) / step + 1e-9)) + 1;
    for (int i = 0; i < n; ++i) out.push_back(start + step * i);
  } else {
    std::stringstream ss(text);
    for (std::string item; std::getline(ss, item, ',');) out.push_back(parse(item));
  }
  if (out.empty()) throw std::invalid_argument("empty Es/N0 list");
  return out;
}

std::string ber_csv(std::span<const BerRecord> records) {
  std::ostringstream out;
  out.precision(10);
  out << "esn0_db,bits,errors,ber,ci95\n";
  for (const auto& r : records) out << r.esn0_db << ',' << r.bits << ',' << r.errors << ',' << r.ber << ',' << r.ci95 << '\n';
  return out.str();
}

void write_ber_csv(std::span<const BerRecord> records, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << ber_csv(records);
}

ModelAnalysis analyze_model(const ClusterModel& model, double threshold, int bins) {
  if (bins < 1) throw std::invalid_argument("analyze_model: need at least one histogram bin");
  ModelAnalysis out;
  const Alphas alphas = compute_alphas(model.weights);
  out.relevances = relevance(alphas, assignment_map(model.options, model.containers.size()));
  out.histogram.assign(static_cast<std::size_t>(bins), 0);
  for (double r : out.relevances)
    ++out.histogram[static_cast<std::size_t>(std::min(bins - 1, static_cast<int>(std::floor(r * bins))))];

  const ClusterWeights pruned = threshold > 0.0 ? prune(model.weights, threshold) : model.weights;
  const FactorGraph structure = ufg_structure(model.channel, model.block_length());
  const ClusterPlan plan(structure, model.containers, model.options);
  const auto support = plan.support(structure, compute_alphas(pruned));
  out.total_containers = static_cast<int>(support.size());
  for (const auto& s : support) {
    if (s.empty())
      ++out.pruned_containers;
    else
      ++out.degree_counts[static_cast<int>(s.size())];
  }
  return out;
}

std::string relevance_histogram_csv(const ModelAnalysis& analysis) {
  std::ostringstream out;
  out << "bin_lo,bin_hi,count,fraction\n";
  const auto bins = analysis.histogram.size();
  const double total = static_cast<double>(analysis.relevances.size());
  for (std::size_t b = 0; b < bins; ++b)
    out << static_cast<double>(b) / bins << ',' << static_cast<double>(b + 1) / bins << ',' << analysis.histogram[b]
        << ',' << (total > 0 ? analysis.histogram[b] / total : 0.0) << '\n';
  return out.str();
}

std::string degree_table_csv(const ModelAnalysis& analysis, int max_degree) {
  std::ostringstream out;
  out.precision(4);
  out << "degree";
  for (int d = 1; d <= max_degree; ++d) out << ',' << d;
  out << ",pruned\npercent";
  const double total = analysis.total_containers > 0 ? analysis.total_containers : 1;
  for (int d = 1; d <= max_degree; ++d) {
    const auto it = analysis.degree_counts.find(d);
    out << ',' << 100.0 * (it == analysis.degree_counts.end() ? 0 : it->second) / total;
  }
  out << ',' << 100.0 * analysis.pruned_containers / total << '\n';
  return out.str();
}

ClusterModel prune_model(const ClusterModel& model, double threshold) {
  ClusterModel out = model;
  out.weights = prune(model.weights, threshold);
  return out;
}

}  // namespace fgc
