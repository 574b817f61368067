#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fgc::ad {

/// Handle to a node on a Tape.
struct Var {
  std::uint32_t index = 0;
};

enum class Op : std::uint8_t {
  Input,
  Constant,
  Sum,        // n-ary
  Linear,     // n-ary, sum_i c_i v_i with constant coefficients
  Sub,
  Mul,
  Scale,      // c * v
  Exp,
  Log,
  Sigmoid,
  LogSumExp,  // n-ary, max-shifted
  Clamp,
};

const char* op_name(Op op);

/// Raised when a primitive produces NaN or Inf during recording.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reverse-mode tape over a closed set of scalar primitives.
///
/// Values are computed eagerly while recording, so a recorded tape is also a
/// forward evaluation. backward() is a pure function of the tape and can be
/// called repeatedly.
class Tape {
 public:
  /// Differentiable input; inputs are numbered in creation order.
  Var input(double value);
  Var constant(double value);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double c);
  Var exp(Var a);
  Var log(Var a);
  Var sigmoid(Var a);
  /// base^exponent as exp(exponent * log(base)); base must be positive.
  Var pow(Var base, Var exponent);
  Var sum(std::span<const Var> terms);
  Var linear(std::span<const Var> terms, std::span<const double> coefficients);
  Var log_sum_exp(std::span<const Var> terms);
  /// Pass-through gradient inside [lo, hi], zero outside.
  Var clamp(Var a, double lo, double hi);
  /// exp(v_j - logsumexp(v)).
  std::vector<Var> softmax(std::span<const Var> logits);

  double value(Var v) const { return nodes_[v.index].value; }
  std::size_t size() const { return nodes_.size(); }
  std::size_t num_inputs() const { return inputs_.size(); }
  Var input_var(std::size_t slot) const { return {inputs_[slot]}; }

  /// d output / d input for every input slot.
  std::vector<double> backward(Var output) const;
  /// Vector-Jacobian product with the given output seeds.
  std::vector<double> backward(std::span<const Var> outputs, std::span<const double> seeds) const;

  void clear();
  void reserve(std::size_t nodes, std::size_t operands);

 private:
  struct Node {
    Op op;
    std::uint32_t begin;   // into operands_
    std::uint32_t count;
    std::uint32_t coeff;   // into coefficients_ (Linear) or unused
    double value;
    double aux0;           // Scale factor / clamp lower bound
    double aux1;           // clamp upper bound
  };

  Var push(Op op, double value, std::span<const Var> operands, double aux0 = 0.0, double aux1 = 0.0,
           std::uint32_t coeff = 0);
  void reverse_sweep(std::vector<double>& adjoint) const;

  std::vector<Node> nodes_;
  std::vector<std::uint32_t> operands_;
  std::vector<double> coefficients_;
  std::vector<std::uint32_t> inputs_;
};

/// Records a scalar computation on a tape given its input variables.
using Computation = std::function<Var(Tape&, std::span<const Var>)>;

struct ValueAndGradient {
  double value = 0.0;
  std::vector<double> gradient;
};

ValueAndGradient record_and_backprop(const Computation& computation, std::span<const double> params);

/// Forward value only.
double evaluate(const Computation& computation, std::span<const double> params);

struct GradientCheck {
  double max_relative_error = 0.0;
  std::size_t worst_parameter = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Central differences per parameter against the tape gradient; the relative
/// error uses max(|analytic|, 1e-8) as denominator.
GradientCheck finite_difference_check(const Computation& computation, std::span<const double> params,
                                      double step);

}  // namespace fgc::ad
