#include "fgc/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fgc::ad {

const char* op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Constant: return "constant";
    case Op::Sum: return "sum";
    case Op::Linear: return "linear";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Sigmoid: return "sigmoid";
    case Op::LogSumExp: return "log_sum_exp";
    case Op::Clamp: return "clamp";
  }
  return "?";
}

Var Tape::push(Op op, double value, std::span<const Var> operands, double aux0, double aux1,
               std::uint32_t coeff) {
  // Inputs may be -inf (a pruned logit); anything computed from them is checked.
  if (op == Op::Input ? std::isnan(value) : !std::isfinite(value))
    throw NumericError(std::string("autodiff: ") + op_name(op) + " produced a non-finite value at node " +
                       std::to_string(nodes_.size()));
  const auto begin = static_cast<std::uint32_t>(operands_.size());
  for (Var v : operands) operands_.push_back(v.index);
  nodes_.push_back({op, begin, static_cast<std::uint32_t>(operands.size()), coeff, value, aux0, aux1});
  return {static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::input(double value) {
  Var v = push(Op::Input, value, {});
  inputs_.push_back(v.index);
  return v;
}

Var Tape::constant(double value) { return push(Op::Constant, value, {}); }

Var Tape::add(Var a, Var b) {
  const Var ops[2] = {a, b};
  return push(Op::Sum, value(a) + value(b), ops);
}

Var Tape::sub(Var a, Var b) {
  const Var ops[2] = {a, b};
  return push(Op::Sub, value(a) - value(b), ops);
}

Var Tape::mul(Var a, Var b) {
  const Var ops[2] = {a, b};
  return push(Op::Mul, value(a) * value(b), ops);
}

Var Tape::scale(Var a, double c) {
  const Var ops[1] = {a};
  return push(Op::Scale, c * value(a), ops, c);
}

Var Tape::exp(Var a) {
  const Var ops[1] = {a};
  return push(Op::Exp, std::exp(value(a)), ops);
}

Var Tape::log(Var a) {
  const Var ops[1] = {a};
  return push(Op::Log, std::log(value(a)), ops);
}

Var Tape::sigmoid(Var a) {
  const Var ops[1] = {a};
  const double x = value(a);
  const double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  return push(Op::Sigmoid, s, ops);
}

Var Tape::pow(Var base, Var exponent) {
  if (!(value(base) > 0.0)) throw std::domain_error("autodiff: pow requires a positive base");
  return exp(mul(exponent, log(base)));
}

Var Tape::sum(std::span<const Var> terms) {
  double acc = 0.0;
  for (Var v : terms) acc += value(v);
  return push(Op::Sum, acc, terms);
}

Var Tape::linear(std::span<const Var> terms, std::span<const double> coefficients) {
  if (terms.size() != coefficients.size())
    throw std::invalid_argument("autodiff: linear needs one coefficient per term");
  const auto coeff = static_cast<std::uint32_t>(coefficients_.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    acc += coefficients[i] * value(terms[i]);
    coefficients_.push_back(coefficients[i]);
  }
  return push(Op::Linear, acc, terms, 0.0, 0.0, coeff);
}

Var Tape::log_sum_exp(std::span<const Var> terms) {
  if (terms.empty()) throw std::invalid_argument("autodiff: log_sum_exp of no terms");
  double peak = -std::numeric_limits<double>::infinity();
  for (Var v : terms) peak = std::max(peak, value(v));
  double acc = 0.0;
  for (Var v : terms) acc += std::exp(value(v) - peak);
  return push(Op::LogSumExp, peak + std::log(acc), terms);
}

Var Tape::clamp(Var a, double lo, double hi) {
  const Var ops[1] = {a};
  return push(Op::Clamp, std::clamp(value(a), lo, hi), ops, lo, hi);
}

std::vector<Var> Tape::softmax(std::span<const Var> logits) {
  const Var normalizer = log_sum_exp(logits);
  std::vector<Var> out;
  out.reserve(logits.size());
  for (Var v : logits) out.push_back(exp(sub(v, normalizer)));
  return out;
}

void Tape::reverse_sweep(std::vector<double>& adjoint) const {
  for (std::size_t n = nodes_.size(); n-- > 0;) {
    const double g = adjoint[n];
    if (g == 0.0) continue;
    const Node& node = nodes_[n];
    const std::uint32_t* ops = operands_.data() + node.begin;
    switch (node.op) {
      case Op::Input:
      case Op::Constant:
        break;
      case Op::Sum:
        for (std::uint32_t i = 0; i < node.count; ++i) adjoint[ops[i]] += g;
        break;
      case Op::Linear: {
        const double* c = coefficients_.data() + node.coeff;
        for (std::uint32_t i = 0; i < node.count; ++i) adjoint[ops[i]] += g * c[i];
        break;
      }
      case Op::Sub:
        adjoint[ops[0]] += g;
        adjoint[ops[1]] -= g;
        break;
      case Op::Mul:
        adjoint[ops[0]] += g * nodes_[ops[1]].value;
        adjoint[ops[1]] += g * nodes_[ops[0]].value;
        break;
      case Op::Scale:
        adjoint[ops[0]] += g * node.aux0;
        break;
      case Op::Exp:
        adjoint[ops[0]] += g * node.value;
        break;
      case Op::Log:
        adjoint[ops[0]] += g / nodes_[ops[0]].value;
        break;
      case Op::Sigmoid:
        adjoint[ops[0]] += g * node.value * (1.0 - node.value);
        break;
      case Op::LogSumExp:
        for (std::uint32_t i = 0; i < node.count; ++i)
          adjoint[ops[i]] += g * std::exp(nodes_[ops[i]].value - node.value);
        break;
      case Op::Clamp: {
        const double x = nodes_[ops[0]].value;
        if (x >= node.aux0 && x <= node.aux1) adjoint[ops[0]] += g;
        break;
      }
    }
  }
}

std::vector<double> Tape::backward(Var output) const {
  const Var outputs[1] = {output};
  const double seeds[1] = {1.0};
  return backward(outputs, seeds);
}

std::vector<double> Tape::backward(std::span<const Var> outputs, std::span<const double> seeds) const {
  if (outputs.size() != seeds.size()) throw std::invalid_argument("autodiff: one seed per output required");
  std::vector<double> adjoint(nodes_.size(), 0.0);
  for (std::size_t i = 0; i < outputs.size(); ++i) adjoint[outputs[i].index] += seeds[i];
  reverse_sweep(adjoint);
  std::vector<double> grad(inputs_.size());
  for (std::size_t i = 0; i < inputs_.size(); ++i) grad[i] = adjoint[inputs_[i]];
  return grad;
}

void Tape::clear() {
  nodes_.clear();
  operands_.clear();
  coefficients_.clear();
  inputs_.clear();
}

void Tape::reserve(std::size_t nodes, std::size_t operands) {
  nodes_.reserve(nodes);
  operands_.reserve(operands);
}

namespace {

Var record(Tape& tape, const Computation& computation, std::span<const double> params) {
  std::vector<Var> inputs;
  inputs.reserve(params.size());
  for (double p : params) inputs.push_back(tape.input(p));
  return computation(tape, inputs);
}

}  // namespace

ValueAndGradient record_and_backprop(const Computation& computation, std::span<const double> params) {
  Tape tape;
  const Var out = record(tape, computation, params);
  return {tape.value(out), tape.backward(out)};
}

double evaluate(const Computation& computation, std::span<const double> params) {
  Tape tape;
  return tape.value(record(tape, computation, params));
}

GradientCheck finite_difference_check(const Computation& computation, std::span<const double> params,
                                      double step) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_difference_check: step must be positive");
  const auto analytic = record_and_backprop(computation, params).gradient;
  std::vector<double> probe(params.begin(), params.end());
  GradientCheck result;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + step;
    const double up = evaluate(computation, probe);
    probe[i] = saved - step;
    const double down = evaluate(computation, probe);
    probe[i] = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double err = std::abs(numeric - analytic[i]) / std::max(std::abs(analytic[i]), 1e-8);
    if (err > result.max_relative_error || i == 0) {
      result = {err, i, analytic[i], numeric};
    }
  }
  return result;
}

}  // namespace fgc::ad
