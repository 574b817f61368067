#include "fgc/train.hpp"

#include <cmath>
#include <exception>
#include <fstream>
#include <stdexcept>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fgc {

namespace {

constexpr std::uint64_t kInitStreamSalt = 0x9E3779B97F4A7C15ull;

std::string loss_name(LossKind loss) { return loss == LossKind::SoftBer ? "soft_ber" : "cross_entropy"; }

LossKind loss_from_name(const std::string& name) {
  if (name == "soft_ber") return LossKind::SoftBer;
  if (name == "cross_entropy") return LossKind::CrossEntropy;
  throw std::invalid_argument("unknown loss '" + name + "'");
}

void validate(const TrainConfig& c) {
  if (c.batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");
  if (c.steps < 0) throw std::invalid_argument("train: step count must be >= 0");
  if (!(c.learning_rate > 0.0)) throw std::invalid_argument("train: learning rate must be positive");
  if (c.iterations < 1) throw std::invalid_argument("train: SPA iterations must be >= 1");
}

ClusterModel initial_model(const TrainConfig& config) {
  validate(config);
  ClusterModel model = ClusterModel::create(config.channel, config.block_length, config.degree, config.span_limit);
  RandomStream rng(config.seed ^ kInitStreamSalt, 0);
  model.weights = ClusterWeights::random_normal(model.options, rng);
  if (config.nbp) model.nbp = NbpWeights::ones(model.num_container_edges(), config.iterations);
  return model;
}

std::size_t num_params(const ClusterModel& model) {
  return model.weights.num_entries() + (model.nbp ? model.nbp->values.size() : 0);
}

}  // namespace

nlohmann::json config_to_json(const TrainConfig& c) {
  return {{"h", c.channel.taps()},   {"K", c.block_length},
          {"D", c.batch_size},       {"steps", c.steps},
          {"learning_rate", c.learning_rate},
          {"train_esn0_db", c.train_esn0_db},
          {"iterations", c.iterations},
          {"d_max", c.degree},       {"span_limit", c.span_limit},
          {"nbp", c.nbp},            {"loss", loss_name(c.loss)},
          {"seed", c.seed}};
}

TrainConfig config_from_json(const nlohmann::json& doc, TrainConfig c) {
  if (doc.contains("h")) c.channel = ChannelSpec(doc.at("h").get<std::vector<double>>());
  if (doc.contains("K")) c.block_length = doc.at("K").get<int>();
  if (doc.contains("D")) c.batch_size = doc.at("D").get<int>();
  if (doc.contains("steps")) c.steps = doc.at("steps").get<int>();
  if (doc.contains("learning_rate")) c.learning_rate = doc.at("learning_rate").get<double>();
  if (doc.contains("train_esn0_db")) c.train_esn0_db = doc.at("train_esn0_db").get<double>();
  if (doc.contains("iterations")) c.iterations = doc.at("iterations").get<int>();
  if (doc.contains("d_max")) c.degree = doc.at("d_max").get<int>();
  if (doc.contains("span_limit")) c.span_limit = doc.at("span_limit").get<int>();
  if (doc.contains("nbp")) c.nbp = doc.at("nbp").get<bool>();
  if (doc.contains("loss")) c.loss = loss_from_name(doc.at("loss").get<std::string>());
  if (doc.contains("seed")) c.seed = doc.at("seed").get<std::uint64_t>();
  return c;
}

double soft_ber(std::span<const std::vector<double>> marginals, std::span<const SymbolBlock> symbols) {
  if (marginals.size() != symbols.size()) throw std::invalid_argument("soft_ber: batch sizes differ");
  double total = 0.0;
  for (std::size_t i = 0; i < marginals.size(); ++i) {
    const auto& m = marginals[i];
    const auto& x = symbols[i];
    if (static_cast<int>(m.size()) != x.size()) throw std::invalid_argument("soft_ber: block lengths differ");
    for (std::size_t k = 0; k < m.size(); ++k) {
      if (!(m[k] >= 0.0 && m[k] <= 1.0)) throw std::invalid_argument("soft_ber: marginal outside [0, 1]");
      const double xk = x[static_cast<int>(k)];
      total += std::pow(m[k], 0.5 * (1.0 - xk)) * std::pow(1.0 - m[k], 0.5 * (1.0 + xk));
    }
  }
  return total;
}

void adam_step(AdamState& s, std::span<double> params, std::span<const double> gradient,
               std::span<const std::uint8_t> frozen, double learning_rate) {
  if (params.size() != gradient.size() || params.size() != s.first_moment.size() ||
      params.size() != s.second_moment.size() || (!frozen.empty() && frozen.size() != params.size()))
    throw std::invalid_argument("adam_step: parameter, gradient and moment sizes differ");
  for (std::size_t i = 0; i < gradient.size(); ++i)
    if ((frozen.empty() || !frozen[i]) && !std::isfinite(gradient[i]))
      throw std::runtime_error("adam_step: non-finite gradient at entry " + std::to_string(i) + " in step " +
                               std::to_string(s.step + 1));
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, s.step);
  const double c2 = 1.0 - std::pow(s.beta2, s.step);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!frozen.empty() && frozen[i]) continue;
    const double g = gradient[i];
    s.first_moment[i] = s.beta1 * s.first_moment[i] + (1.0 - s.beta1) * g;
    s.second_moment[i] = s.beta2 * s.second_moment[i] + (1.0 - s.beta2) * g * g;
    const double m_hat = s.first_moment[i] / c1;
    const double v_hat = s.second_moment[i] / c2;
    params[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + s.epsilon);
  }
}

ad::Var record_sequence_loss(ad::Tape& tape, const ClusterPlan& plan, const SpaTopology& topology,
                             const FactorGraph& bfg, std::span<const ad::Var> alpha_vars,
                             std::span<const std::uint8_t> active, std::span<const ad::Var> nbp_vars,
                             const SymbolBlock& x, int iterations, LossKind loss) {
  const auto tables = plan.tables(tape, bfg, alpha_vars, active);
  const TapeBackend backend(tape);
  const auto llr = spa_kernel(backend, topology, std::span<const std::vector<ad::Var>>(tables), iterations, nbp_vars);
  std::vector<ad::Var> terms;
  terms.reserve(llr.size());
  for (std::size_t k = 0; k < llr.size(); ++k) {
    // z = -x_k * llr_k: P(error) = sigmoid(z), -log P(correct) = log(1 + e^z).
    const ad::Var z = tape.scale(llr[k], -static_cast<double>(x[static_cast<int>(k)]));
    if (loss == LossKind::SoftBer) {
      terms.push_back(tape.sigmoid(z));
    } else {
      const ad::Var pair[2] = {backend.zero(), z};
      terms.push_back(tape.log_sum_exp(pair));
    }
  }
  return tape.sum(terms);
}

SequenceGradient sequence_loss_gradient(const ClusterPlan& plan, const SpaTopology& topology, const FactorGraph& bfg,
                                        std::span<const double> alpha, std::span<const std::uint8_t> active,
                                        std::span<const double> nbp, const SymbolBlock& x, int iterations,
                                        LossKind loss) {
  if (alpha.size() != plan.num_slots() || active.size() != plan.num_slots())
    throw std::invalid_argument("sequence_loss_gradient: one alpha per slot required");
  std::vector<std::vector<double>> tables(plan.num_containers());
  for (std::size_t m = 0; m < plan.num_containers(); ++m) {
    auto& table = tables[m];
    table.assign(std::size_t{1} << plan.containers()[m].variables.size(), 0.0);
    for (const auto& term : plan.terms(m)) {
      if (!active[term.slot]) continue;
      const auto& f = bfg.factor(term.fn).log_values;
      const double a = alpha[term.slot];
      for (std::size_t c = 0; c < table.size(); ++c) table[c] += a * f[term.projection[c]];
    }
  }
  const std::span<const std::vector<double>> tspan(tables);
  const SpaTrace trace = spa_forward(topology, tspan, iterations, nbp);

  SequenceGradient out;
  std::vector<double> llr_adjoint(trace.llr.size());
  for (std::size_t k = 0; k < trace.llr.size(); ++k) {
    const double sign = -static_cast<double>(x[static_cast<int>(k)]);
    const double z = sign * trace.llr[k];
    const double s = sigmoid(z);
    if (loss == LossKind::SoftBer) {
      out.loss += s;
      llr_adjoint[k] = sign * s * (1.0 - s);
    } else {
      const double pair[2] = {0.0, z};
      out.loss += DoubleBackend{}.log_sum_exp(pair);
      llr_adjoint[k] = sign * s;
    }
  }
  const SpaAdjoint adj = spa_backward(topology, tspan, nbp, trace, llr_adjoint);
  out.alpha.assign(plan.num_slots(), 0.0);
  for (std::size_t m = 0; m < plan.num_containers(); ++m) {
    const auto& g = adj.tables[m];
    for (const auto& term : plan.terms(m)) {
      if (!active[term.slot]) continue;
      const auto& f = bfg.factor(term.fn).log_values;
      double acc = 0.0;
      for (std::size_t c = 0; c < g.size(); ++c) acc += g[c] * f[term.projection[c]];
      out.alpha[term.slot] += acc;
    }
  }
  out.nbp = adj.weights;
  return out;
}

TrainState initial_state(const TrainConfig& config) {
  TrainState state{initial_model(config), AdamState{}, {}};
  state.adam = AdamState(num_params(state.model));
  return state;
}

Trainer::Trainer(TrainConfig config) : Trainer(config, initial_state(config)) {}

Trainer::Trainer(TrainConfig config, TrainState state)
    : config_(std::move(config)),
      state_(std::move(state)),
      structure_(ufg_structure(state_.model.channel, state_.model.block_length())),
      plan_(structure_, state_.model.containers, state_.model.options),
      topology_([&] {
        std::vector<std::vector<int>> nb;
        for (const auto& c : state_.model.containers.containers) nb.push_back(c.variables);
        return SpaTopology::from_neighbors(state_.model.block_length(), nb);
      }()) {
  validate(config_);
  if (!(config_.channel == state_.model.channel) || config_.block_length != state_.model.block_length() ||
      config_.degree != state_.model.degree())
    throw std::invalid_argument("train: configuration does not match the model");
  if (config_.nbp && !state_.model.nbp) state_.model.nbp = NbpWeights::ones(state_.model.num_container_edges(), config_.iterations);
  if (state_.model.nbp && state_.model.nbp->iterations != config_.iterations)
    throw std::invalid_argument("train: NBP weights were trained for a different iteration count");
  if (state_.adam.first_moment.size() != num_params(state_.model))
    throw std::invalid_argument("train: optimizer state does not match the model");
}

BatchGradient Trainer::batch_gradient(int step_index) const {
  return batch_gradient_impl(step_index, true, config_.seed, config_.batch_size);
}

BatchGradient Trainer::batch_gradient_serial(int step_index) const {
  return batch_gradient_impl(step_index, false, config_.seed, config_.batch_size);
}

BatchGradient Trainer::batch_gradient_impl(int step_index, bool parallel, std::uint64_t seed,
                                           int num_sequences) const {
  const auto& model = state_.model;
  const std::size_t slots = plan_.num_slots();
  const double noise_variance = noise_variance_from_esn0(config_.train_esn0_db);

  // Softmax beta -> alpha on its own tape; sequences take alpha as inputs.
  ad::Tape softmax_tape;
  std::vector<ad::Var> alpha_of_slot(slots);
  std::vector<double> alpha_value(slots, 0.0);
  std::vector<std::uint8_t> active(slots, 0);
  std::vector<ad::Var> logits;
  std::vector<std::size_t> logit_slots;
  for (int fn = 0; fn < plan_.num_bfg_factors(); ++fn) {
    logits.clear();
    logit_slots.clear();
    const auto& beta = model.weights.beta[static_cast<std::size_t>(fn)];
    for (std::size_t j = 0; j < beta.size(); ++j) {
      const std::size_t s = plan_.slot(fn, static_cast<int>(j));
      const bool masked = model.weights.masked(static_cast<std::size_t>(fn), j);
      const ad::Var in = softmax_tape.input(masked ? 0.0 : beta[j]);
      if (masked) continue;
      logits.push_back(in);
      logit_slots.push_back(s);
    }
    const auto alphas = softmax_tape.softmax(logits);
    for (std::size_t j = 0; j < alphas.size(); ++j) {
      alpha_of_slot[logit_slots[j]] = alphas[j];
      alpha_value[logit_slots[j]] = softmax_tape.value(alphas[j]);
      active[logit_slots[j]] = 1;
    }
  }
  const std::vector<double> nbp_value = model.nbp ? model.nbp->values : std::vector<double>{};
  const std::size_t inputs_per_sequence = slots + nbp_value.size();

  const auto n = static_cast<std::size_t>(num_sequences);
  std::vector<std::vector<double>> seq_grad(n);
  std::vector<double> seq_loss(n, 0.0);

  auto process = [&](std::size_t i) {
    RandomStream rng(seed, static_cast<std::uint64_t>(step_index) * n + i);
    const SymbolBlock x = sample_symbols(model.block_length(), rng);
    const ObservationBlock y = transmit(x, model.channel, noise_variance, rng);
    const FactorGraph bfg = build_ufg(model.channel, y);
    SequenceGradient g = sequence_loss_gradient(plan_, topology_, bfg, alpha_value, active, nbp_value, x,
                                                config_.iterations, config_.loss);
    seq_loss[i] = g.loss;
    seq_grad[i] = std::move(g.alpha);
    seq_grad[i].insert(seq_grad[i].end(), g.nbp.begin(), g.nbp.end());
  };

  if (parallel) {
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
      try {
        process(static_cast<std::size_t>(i));
      } catch (...) {
#pragma omp critical
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);
  } else {
    for (std::size_t i = 0; i < n; ++i) process(i);
  }

  BatchGradient out;
  std::vector<double> alpha_grad(slots, 0.0);
  out.nbp.assign(nbp_value.size(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (seq_grad[i].size() != inputs_per_sequence) throw std::logic_error("train: gradient size mismatch");
    out.loss += seq_loss[i];
    for (std::size_t s = 0; s < slots; ++s) alpha_grad[s] += seq_grad[i][s];
    for (std::size_t e = 0; e < nbp_value.size(); ++e) out.nbp[e] += seq_grad[i][slots + e];
  }

  std::vector<ad::Var> outputs;
  std::vector<double> seeds;
  for (std::size_t s = 0; s < slots; ++s)
    if (active[s]) {
      outputs.push_back(alpha_of_slot[s]);
      seeds.push_back(alpha_grad[s]);
    }
  out.beta = softmax_tape.backward(outputs, seeds);
  return out;
}

std::vector<double> Trainer::parameters() const {
  std::vector<double> p;
  p.reserve(num_params(state_.model));
  for (const auto& row : state_.model.weights.beta) p.insert(p.end(), row.begin(), row.end());
  if (state_.model.nbp) p.insert(p.end(), state_.model.nbp->values.begin(), state_.model.nbp->values.end());
  return p;
}

void Trainer::set_parameters(std::span<const double> params) {
  std::size_t k = 0;
  for (auto& row : state_.model.weights.beta)
    for (auto& b : row) b = params[k++];
  if (state_.model.nbp)
    for (auto& w : state_.model.nbp->values) w = params[k++];
}

double Trainer::step() {
  const BatchGradient grad = batch_gradient(state_.adam.step);
  std::vector<double> params = parameters();
  std::vector<double> flat = grad.beta;
  flat.insert(flat.end(), grad.nbp.begin(), grad.nbp.end());
  std::vector<std::uint8_t> frozen(params.size(), 0);
  std::size_t k = 0;
  for (const auto& row : state_.model.weights.mask)
    for (auto m : row) frozen[k++] = m;
  adam_step(state_.adam, params, flat, frozen, config_.learning_rate);
  set_parameters(params);
  state_.loss_history.push_back(grad.loss);
  return grad.loss;
}

void Trainer::run(int steps, const std::function<void(int, double)>& on_step) {
  for (int s = 0; s < steps; ++s) {
    const double loss = step();
    if (on_step) on_step(state_.adam.step, loss);
  }
}

double Trainer::evaluate_loss(std::uint64_t seed, int num_sequences) const {
  return batch_gradient_impl(0, true, seed, num_sequences).loss;
}

nlohmann::json checkpoint_to_json(const Trainer& trainer) {
  const auto& s = trainer.state();
  return {{"model", model_to_json(s.model)},
          {"config", config_to_json(trainer.config())},
          {"adam",
           {{"step", s.adam.step}, {"first_moment", s.adam.first_moment}, {"second_moment", s.adam.second_moment}}},
          {"loss_history", s.loss_history}};
}

Trainer trainer_from_checkpoint(const nlohmann::json& doc) {
  TrainState state{model_from_json(doc.at("model")), AdamState{}, {}};
  const auto& adam = doc.at("adam");
  state.adam.step = adam.at("step").get<int>();
  state.adam.first_moment = adam.at("first_moment").get<std::vector<double>>();
  state.adam.second_moment = adam.at("second_moment").get<std::vector<double>>();
  state.loss_history = doc.at("loss_history").get<std::vector<double>>();
  return Trainer(config_from_json(doc.at("config")), std::move(state));
}

void write_loss_csv(std::span<const double> history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "step,soft_ber\n";
  out.precision(17);
  for (std::size_t i = 0; i < history.size(); ++i) out << i << ',' << history[i] << '\n';
}

}  // namespace fgc
