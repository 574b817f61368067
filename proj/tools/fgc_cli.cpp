// fgc: train clustered factor graphs, sweep BER, inspect and prune models.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <omp.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "fgc/channel.hpp"
#include "fgc/cluster_model.hpp"
#include "fgc/evaluate.hpp"
#include "fgc/factor_graph.hpp"
#include "fgc/selftest.hpp"
#include "fgc/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fgc;

namespace {

struct Common {
  std::uint64_t seed = 1;
  std::string config_path;
  std::string out_dir = "out";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "RNG seed");
  cmd->add_option("--config", c.config_path, "JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--out", c.out_dir, "Output directory")->capture_default_str();
}

json load_config(const Common& c) { return c.config_path.empty() ? json::object() : read_json_file(c.config_path); }

// Value from the command line if given, else from the config, else the fallback.
template <class T>
T pick(const CLI::App* cmd, const char* flag, const T& cli_value, const json& config, const char* key,
       const T& fallback) {
  if (cmd->count(flag) > 0) return cli_value;
  if (config.contains(key)) return config.at(key).get<T>();
  return fallback;
}

class Manifest {
 public:
  Manifest(std::string command, const Common& c, int argc, char** argv) : doc_(json::object()), dir_(c.out_dir) {
    doc_["command"] = std::move(command);
    doc_["argv"] = std::vector<std::string>(argv, argv + argc);
    doc_["seed"] = c.seed;
    doc_["config_file"] = c.config_path.empty() ? json(nullptr) : json(fs::absolute(c.config_path).string());
    doc_["out_dir"] = fs::absolute(c.out_dir).string();
    doc_["threads"] = omp_get_max_threads();
    doc_["inputs"] = json::object();
    doc_["outputs"] = json::array();
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    doc_["started"] = stamp;
    fs::create_directories(dir_);
  }

  void input(const std::string& key, const std::string& path) { doc_["inputs"][key] = fs::absolute(path).string(); }
  void output(const fs::path& path) { doc_["outputs"].push_back(fs::absolute(path).string()); }
  json& operator[](const char* key) { return doc_[key]; }
  fs::path path(const std::string& name) const { return dir_ / name; }

  void write() {
    const fs::path p = dir_ / "manifest.json";
    write_json_file(doc_, p);
    std::cerr << "manifest: " << fs::absolute(p).string() << '\n';
  }

 private:
  json doc_;
  fs::path dir_;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string join_esn0(const json& config) {
  if (!config.contains("esn0")) return "0:2:12";
  const auto& v = config.at("esn0");
  if (v.is_string()) return v.get<std::string>();
  std::ostringstream out;
  for (std::size_t i = 0; i < v.size(); ++i) out << (i ? "," : "") << v[i].get<double>();
  return out.str();
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  int steps = 0, batch = 0, block_length = 0, degree = 0, iterations = 0, span_limit = 0;
  double lr = 0.0, esn0 = 0.0;
  bool nbp = false;
  std::string loss, resume;
  int checkpoint_every = 0;
  int log_every = 50;
};

int run_train(CLI::App* cmd, const Common& common, const TrainArgs& a, int argc, char** argv) {
  const json config = load_config(common);
  Manifest manifest("train", common, argc, argv);

  std::optional<Trainer> trainer;
  if (!a.resume.empty()) {
    manifest.input("resume", a.resume);
    trainer.emplace(trainer_from_checkpoint(read_json_file(a.resume)));
  } else {
    TrainConfig c = config_from_json(config);
    c.seed = pick<std::uint64_t>(cmd, "--seed", common.seed, config, "seed", c.seed);
    if (cmd->count("--steps")) c.steps = a.steps;
    if (cmd->count("--batch")) c.batch_size = a.batch;
    if (cmd->count("--block-length")) c.block_length = a.block_length;
    if (cmd->count("--degree")) c.degree = a.degree;
    if (cmd->count("--iterations")) c.iterations = a.iterations;
    if (cmd->count("--span-limit")) c.span_limit = a.span_limit;
    if (cmd->count("--lr")) c.learning_rate = a.lr;
    if (cmd->count("--esn0")) c.train_esn0_db = a.esn0;
    if (cmd->count("--nbp")) c.nbp = a.nbp;
    if (cmd->count("--loss")) c.loss = config_from_json({{"loss", a.loss}}).loss;
    trainer.emplace(c);
  }
  const TrainConfig& c = trainer->config();
  manifest["config"] = config_to_json(c);
  manifest["seed"] = c.seed;

  const int remaining = c.steps - trainer->state().adam.step;
  const fs::path ckpt = manifest.path("checkpoint.json");
  trainer->run(std::max(0, remaining), [&](int step, double loss) {
    if (a.log_every > 0 && (step % a.log_every == 0 || step == c.steps))
      std::cerr << "step " << step << " soft_ber/symbol " << loss / (c.batch_size * c.block_length) << '\n';
    if (a.checkpoint_every > 0 && step % a.checkpoint_every == 0) write_json_file(checkpoint_to_json(*trainer), ckpt);
  });

  const fs::path model_path = manifest.path("model.json");
  const fs::path loss_path = manifest.path("loss.csv");
  save_model(trainer->state().model, model_path);
  write_loss_csv(trainer->state().loss_history, loss_path);
  write_json_file(checkpoint_to_json(*trainer), ckpt);
  for (const auto& p : {model_path, loss_path, ckpt}) manifest.output(p);
  manifest.write();
  std::cout << fs::absolute(model_path).string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct BerArgs {
  std::string variant, model, esn0;
  int iterations = 0, block_length = 0, blocks_per_round = 0;
  std::uint64_t min_errors = 0, max_bits = 0;
};

int run_ber(CLI::App* cmd, const Common& common, const BerArgs& a, int argc, char** argv) {
  const json config = load_config(common);
  Manifest manifest("ber", common, argc, argv);
  const std::string variant = pick<std::string>(cmd, "--variant", a.variant, config, "variant", "ufg");
  const std::string model_path = pick<std::string>(cmd, "--model", a.model, config, "model", "");
  const std::string esn0_text = cmd->count("--esn0") ? a.esn0 : join_esn0(config);

  SweepConfig sweep;
  sweep.seed = pick<std::uint64_t>(cmd, "--seed", common.seed, config, "seed", 1);
  sweep.stop.min_errors = pick<std::uint64_t>(cmd, "--min-errors", a.min_errors, config, "min_errors", 100);
  sweep.stop.max_bits = pick<std::uint64_t>(cmd, "--max-bits", a.max_bits, config, "max_bits", 10'000'000);
  sweep.stop.blocks_per_round = pick<int>(cmd, "--blocks-per-round", a.blocks_per_round, config, "blocks_per_round", 64);

  ChannelSpec channel = config.contains("h") ? ChannelSpec(config.at("h").get<std::vector<double>>())
                                             : ChannelSpec::reference();
  std::optional<Detector> detector;
  int block_length = pick<int>(cmd, "--block-length", a.block_length, config, "K", 64);
  int iterations = pick<int>(cmd, "--iterations", a.iterations, config, "eval_iterations", 10);
  if (variant == "ufg") {
    detector = Detector::ufg(channel, iterations);
  } else if (variant == "ffg") {
    detector = Detector::ffg(channel, iterations);
  } else if (variant == "map") {
    if (!cmd->count("--block-length") && !config.contains("K")) block_length = 12;
    detector = Detector::map_bruteforce(channel);
  } else if (variant == "cc" || variant == "cc-nbp") {
    if (model_path.empty()) throw CLI::ValidationError("--model", "required for variant " + variant);
    manifest.input("model", model_path);
    ClusterModel model = load_model(model_path);
    const bool nbp = variant == "cc-nbp";
    if (!cmd->count("--iterations") && !config.contains("eval_iterations"))
      iterations = nbp ? model.nbp.value_or(NbpWeights{}).iterations : (model.degree() == 3 ? 7 : 10);
    block_length = model.block_length();
    channel = model.channel;
    detector = Detector::clustered(std::move(model), iterations, nbp);
  } else {
    throw CLI::ValidationError("--variant", "unknown variant '" + variant + "'");
  }
  if (variant == "map" && block_length > kMaxBruteForceLength)
    throw CLI::ValidationError("--block-length", "MAP brute force needs K <= " + std::to_string(kMaxBruteForceLength));
  sweep.block_length = block_length;
  std::vector<double> esn0;
  try {
    esn0 = parse_esn0_list(esn0_text);
  } catch (const std::invalid_argument& e) {
    throw CLI::ValidationError("--esn0", e.what());
  }

  manifest["variant"] = variant;
  manifest["detector"] = detector->name();
  manifest["iterations"] = iterations;
  manifest["h"] = channel.taps();
  manifest["sweep"] = {{"esn0", esn0},
                       {"K", sweep.block_length},
                       {"min_errors", sweep.stop.min_errors},
                       {"max_bits", sweep.stop.max_bits},
                       {"blocks_per_round", sweep.stop.blocks_per_round},
                       {"seed", sweep.seed}};
  manifest["seed"] = sweep.seed;

  const auto records = ber_sweep(*detector, esn0, sweep);
  const fs::path csv = manifest.path("ber.csv");
  write_ber_csv(records, csv);
  manifest.output(csv);
  manifest.write();
  std::cout << ber_csv(records);
  return 0;
}

// ---------------------------------------------------------------------------

int run_analyze(CLI::App* cmd, const Common& common, const std::string& model_arg, double thr_arg, int bins_arg,
                int argc, char** argv) {
  const json config = load_config(common);
  Manifest manifest("analyze", common, argc, argv);
  const std::string model_path = pick<std::string>(cmd, "--model", model_arg, config, "model", "");
  if (model_path.empty()) throw CLI::ValidationError("--model", "model file required");
  const double thr = pick<double>(cmd, "--thr", thr_arg, config, "threshold", 0.01);
  const int bins = pick<int>(cmd, "--bins", bins_arg, config, "bins", 20);
  manifest.input("model", model_path);
  const ClusterModel model = load_model(model_path);
  const ModelAnalysis analysis = analyze_model(model, thr, bins);

  const fs::path hist = manifest.path("relevance_histogram.csv");
  const fs::path table = manifest.path("degree_table.csv");
  write_text(hist, relevance_histogram_csv(analysis));
  write_text(table, degree_table_csv(analysis, model.degree()));
  manifest["threshold"] = thr;
  manifest["bins"] = bins;
  manifest["pruned_fraction"] = analysis.pruned_fraction();
  manifest.output(hist);
  manifest.output(table);
  manifest.write();
  std::cout << degree_table_csv(analysis, model.degree());
  std::cout << "pruned_fraction," << analysis.pruned_fraction() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

int run_prune(CLI::App* cmd, const Common& common, const std::string& model_arg, double thr_arg, int argc,
              char** argv) {
  const json config = load_config(common);
  Manifest manifest("prune", common, argc, argv);
  const std::string model_path = pick<std::string>(cmd, "--model", model_arg, config, "model", "");
  if (model_path.empty()) throw CLI::ValidationError("--model", "model file required");
  const double thr = pick<double>(cmd, "--thr", thr_arg, config, "threshold", 0.01);
  manifest.input("model", model_path);
  const ClusterModel model = load_model(model_path);
  const ClusterModel pruned = prune_model(model, thr);

  const std::string before = degree_table_csv(analyze_model(model, 0.0), model.degree());
  const std::string after = degree_table_csv(analyze_model(pruned, 0.0), model.degree());
  const fs::path out_model = manifest.path("pruned_model.json");
  const fs::path before_path = manifest.path("degree_table_before.csv");
  const fs::path after_path = manifest.path("degree_table_after.csv");
  save_model(pruned, out_model);
  write_text(before_path, before);
  write_text(after_path, after);
  manifest["threshold"] = thr;
  for (const auto& p : {out_model, before_path, after_path}) manifest.output(p);
  manifest.write();
  std::cout << "before\n" << before << "after\n" << after;
  return 0;
}

// ---------------------------------------------------------------------------

int run_graph_export(CLI::App* cmd, const Common& common, const std::string& variant_arg,
                     const std::string& model_arg, int block_length_arg, double esn0_arg, int argc, char** argv) {
  const json config = load_config(common);
  Manifest manifest("graph export", common, argc, argv);
  const std::string variant = pick<std::string>(cmd, "--variant", variant_arg, config, "variant", "ufg");
  const std::string model_path = pick<std::string>(cmd, "--model", model_arg, config, "model", "");
  const double esn0 = pick<double>(cmd, "--esn0", esn0_arg, config, "train_esn0_db", 10.0);
  const std::uint64_t seed = pick<std::uint64_t>(cmd, "--seed", common.seed, config, "seed", 1);
  ChannelSpec channel = config.contains("h") ? ChannelSpec(config.at("h").get<std::vector<double>>())
                                             : ChannelSpec::reference();
  int block_length = pick<int>(cmd, "--block-length", block_length_arg, config, "K", 64);
  std::optional<ClusterModel> model;
  if (variant == "cc" || variant == "cc-nbp") {
    if (model_path.empty()) throw CLI::ValidationError("--model", "required for variant " + variant);
    manifest.input("model", model_path);
    model = load_model(model_path);
    channel = model->channel;
    block_length = model->block_length();
  } else if (variant != "ufg" && variant != "ffg") {
    throw CLI::ValidationError("--variant", "unknown variant '" + variant + "'");
  }

  RandomStream rng(seed, 0);
  const SymbolBlock x = sample_symbols(block_length, rng);
  const ObservationBlock y = transmit(x, channel, noise_variance_from_esn0(esn0), rng);
  json doc;
  if (variant == "ufg") {
    doc = graph_to_json(build_ufg(channel, y));
  } else if (variant == "ffg") {
    doc = graph_to_json(build_ffg(channel, y));
  } else {
    const auto inst = clustered_instance(*model, y, variant == "cc-nbp");
    doc = graph_to_json(inst.simplified.graph);
    doc["container_ids"] = inst.simplified.origin;
    if (variant == "cc-nbp") doc["nbp_weights"] = {{"iterations", inst.weights.iterations}, {"values", inst.weights.values}};
  }
  doc["symbols"] = x.symbols;
  doc["observation"] = y.samples;
  doc["noise_variance"] = y.noise_variance;
  const fs::path out = manifest.path("graph.json");
  write_json_file(doc, out);
  manifest["variant"] = variant;
  manifest["esn0_db"] = esn0;
  manifest["seed"] = seed;
  manifest.output(out);
  manifest.write();
  std::cout << fs::absolute(out).string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

json suite_json(const SuiteResult& r) {
  return {{"name", r.name}, {"passed", r.passed}, {"metric", r.metric}, {"tolerance", r.tolerance}, {"detail", r.detail}};
}

void print_suite(const SuiteResult& r) {
  std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << " (tolerance " << r.tolerance << ")\n";
}

int run_gradcheck(CLI::App* cmd, const Common& common, int instances_arg, double step_arg, int argc, char** argv) {
  const json config = load_config(common);
  Manifest manifest("gradcheck", common, argc, argv);
  const std::uint64_t seed = pick<std::uint64_t>(cmd, "--seed", common.seed, config, "seed", 1);
  const int instances = pick<int>(cmd, "--instances", instances_arg, config, "instances", 50);
  const double step = pick<double>(cmd, "--step", step_arg, config, "step", 1e-5);
  const SuiteResult r = gradient_suite(instances, seed, step);
  const fs::path out = manifest.path("gradcheck.json");
  write_json_file(suite_json(r), out);
  manifest["seed"] = seed;
  manifest.output(out);
  manifest.write();
  print_suite(r);
  return r.passed ? 0 : 2;
}

int run_selftest(CLI::App* cmd, const Common& common, int argc, char** argv) {
  const json config = load_config(common);
  Manifest manifest("selftest", common, argc, argv);
  const std::uint64_t seed = pick<std::uint64_t>(cmd, "--seed", common.seed, config, "seed", 1);
  const std::vector<SuiteResult> results{tree_exactness_suite(100, seed), cluster_preservation_suite(20, seed),
                                         one_hot_suite(20, seed), gradient_suite(50, seed)};
  json doc = json::array();
  bool ok = true;
  for (const auto& r : results) {
    print_suite(r);
    doc.push_back(suite_json(r));
    ok = ok && r.passed;
  }
  const fs::path out = manifest.path("selftest.json");
  write_json_file(doc, out);
  manifest["seed"] = seed;
  manifest.output(out);
  manifest.write();
  return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learn and evaluate clustered factor graphs for ISI-channel symbol detection"};
  app.require_subcommand(1);
  Common common;

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a continuous-clustering model");
  add_common(train, common);
  train->add_option("--steps", ta.steps, "Adam steps");
  train->add_option("--batch", ta.batch, "Sequences per minibatch (D)");
  train->add_option("--block-length", ta.block_length, "Symbols per block (K)");
  train->add_option("--degree", ta.degree, "Container degree d_max");
  train->add_option("--span-limit", ta.span_limit, "Maximal container span (default L+1)");
  train->add_option("--iterations", ta.iterations, "SPA iterations during training");
  train->add_option("--lr", ta.lr, "Adam learning rate");
  train->add_option("--esn0", ta.esn0, "Training Es/N0 in dB");
  train->add_flag("--nbp", ta.nbp, "Train NBP weights jointly");
  train->add_option("--loss", ta.loss, "soft_ber or cross_entropy");
  train->add_option("--resume", ta.resume, "Continue from a checkpoint")->check(CLI::ExistingFile);
  train->add_option("--checkpoint-every", ta.checkpoint_every, "Write checkpoint.json every n steps");
  train->add_option("--log-every", ta.log_every, "Progress line every n steps (0: quiet)")->capture_default_str();

  BerArgs ba;
  auto* ber = app.add_subcommand("ber", "Monte-Carlo BER sweep");
  add_common(ber, common);
  ber->add_option("--variant", ba.variant, "ufg, ffg, cc, cc-nbp or map");
  ber->add_option("--model", ba.model, "Model file for cc variants")->check(CLI::ExistingFile);
  ber->add_option("--esn0", ba.esn0, "Es/N0 grid in dB: start:step:stop or a,b,c (default 0:2:12)");
  ber->add_option("--iterations", ba.iterations, "SPA iterations (default 10, 7 for CC3)");
  ber->add_option("--block-length", ba.block_length, "Symbols per block (default 64, 12 for map)");
  ber->add_option("--min-errors", ba.min_errors, "Stop once this many bit errors are counted");
  ber->add_option("--max-bits", ba.max_bits, "Bit budget per point");
  ber->add_option("--blocks-per-round", ba.blocks_per_round, "Blocks between stop-rule checks");

  std::string model_path;
  double thr = 0.01;
  int bins = 20;
  auto* analyze = app.add_subcommand("analyze", "Relevance histogram and degree table of a model");
  add_common(analyze, common);
  analyze->add_option("--model", model_path, "Model file")->check(CLI::ExistingFile);
  analyze->add_option("--thr", thr, "Pruning threshold for the degree table")->capture_default_str();
  analyze->add_option("--bins", bins, "Histogram bins over [0, 1]")->capture_default_str();

  auto* prune = app.add_subcommand("prune", "Mask components with alpha below a threshold");
  add_common(prune, common);
  prune->add_option("--model", model_path, "Model file")->check(CLI::ExistingFile);
  prune->add_option("--thr", thr, "Pruning threshold")->capture_default_str();

  std::string variant;
  int block_length = 64;
  double esn0 = 10.0;
  auto* graph = app.add_subcommand("graph", "Factor graph utilities");
  graph->require_subcommand(1);
  auto* graph_export = graph->add_subcommand("export", "Write a graph for one random observation as JSON");
  add_common(graph_export, common);
  graph_export->add_option("--variant", variant, "ufg, ffg, cc or cc-nbp");
  graph_export->add_option("--model", model_path, "Model file for cc variants")->check(CLI::ExistingFile);
  graph_export->add_option("--block-length", block_length, "Symbols per block");
  graph_export->add_option("--esn0", esn0, "Es/N0 of the observation in dB");

  int instances = 50;
  double step = 1e-5;
  auto* gradcheck = app.add_subcommand("gradcheck", "Tape gradients against finite differences");
  add_common(gradcheck, common);
  gradcheck->add_option("--instances", instances, "Random instances")->capture_default_str();
  gradcheck->add_option("--step", step, "Central difference step")->capture_default_str();

  auto* selftest = app.add_subcommand("selftest", "Tree exactness, clustering and gradient suites");
  add_common(selftest, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*train) return run_train(train, common, ta, argc, argv);
    if (*ber) return run_ber(ber, common, ba, argc, argv);
    if (*analyze) return run_analyze(analyze, common, model_path, thr, bins, argc, argv);
    if (*prune) return run_prune(prune, common, model_path, thr, argc, argv);
    if (*graph_export) return run_graph_export(graph_export, common, variant, model_path, block_length, esn0, argc, argv);
    if (*gradcheck) return run_gradcheck(gradcheck, common, instances, step, argc, argv);
    if (*selftest) return run_selftest(selftest, common, argc, argv);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
