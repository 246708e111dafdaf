#pragma once

// Scalar reverse-mode automatic differentiation.
//
// A Tape records every elementary operation of one forward pass as a node
// with at most two parents and the local partial derivative towards each.
// Nodes are appended in evaluation order, so parents always precede their
// children and a single reverse sweep over the node list propagates adjoints.
// Tapes are rebuilt for every evaluation (define-by-run).

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "psinvert/error.hpp"

namespace psinvert {

class Tape;

/// Handle to a node on a Tape.
class Var {
 public:
  Var() = default;

  double value() const;
  std::uint32_t index() const { return index_; }
  const Tape* tape() const { return tape_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t index) : tape_(tape), index_(index) {}

  Tape* tape_ = nullptr;
  std::uint32_t index_ = 0;
};

class Gradients;

class Tape {
 public:
  static constexpr std::uint32_t kNoParent = std::numeric_limits<std::uint32_t>::max();

  /// New independent input.
  Var variable(double value);

  /// Constant node; receives an adjoint like any leaf but is not meant to be read.
  Var constant(double value) { return variable(value); }

  Var unary(double value, const Var& a, double da);
  Var binary(double value, const Var& a, double da, const Var& b, double db);

  double value(std::uint32_t index) const { return nodes_[index].value; }
  std::size_t size() const { return nodes_.size(); }

  /// Drops all nodes, keeps the allocation. Invalidates every Var on this tape.
  void clear();

  /// Smallest distance to a non-differentiable point (max(.,0) or |.|)
  /// observed since the last clear().
  double kink_distance() const { return kink_distance_; }
  void note_kink(double distance);

  /// Reverse sweep from `output`; fills `adjoint` (resized to size()).
  void backward(const Var& output, std::vector<double>& adjoint) const;

  void check_owned(const Var& v) const;

 private:
  struct Node {
    double value;
    std::uint32_t parent[2];
    double partial[2];
  };

  std::vector<Node> nodes_;
  double kink_distance_ = std::numeric_limits<double>::infinity();
};

/// Adjoints of one output with respect to every node of a tape.
class Gradients {
 public:
  Gradients(const Tape& tape, std::vector<double> adjoint)
      : tape_(&tape), adjoint_(std::move(adjoint)) {}

  double operator[](const Var& v) const;
  std::span<const double> all() const { return adjoint_; }

 private:
  const Tape* tape_;
  std::vector<double> adjoint_;
};

/// d(output)/d(node) for every node on `tape`. Throws ForeignVar if `output`
/// was recorded on a different tape.
Gradients backward(const Tape& tape, const Var& output);

inline double Var::value() const { return tape_->value(index_); }

// Arithmetic. Mixing Vars from two tapes throws ForeignVar.
Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator/(const Var& a, const Var& b);
Var operator-(const Var& a);

Var operator+(const Var& a, double b);
Var operator+(double a, const Var& b);
Var operator-(const Var& a, double b);
Var operator-(double a, const Var& b);
Var operator*(const Var& a, double b);
Var operator*(double a, const Var& b);
Var operator/(const Var& a, double b);
Var operator/(double a, const Var& b);

inline Var& operator+=(Var& a, const Var& b) { return a = a + b; }
inline Var& operator-=(Var& a, const Var& b) { return a = a - b; }
inline Var& operator*=(Var& a, const Var& b) { return a = a * b; }

Var exp(const Var& x);
Var log(const Var& x);
Var sqrt(const Var& x);
Var cos(const Var& x);
Var sin(const Var& x);
/// max(x, 0); derivative at exactly 0 is 0.
Var relu(const Var& x);
/// |x|; derivative at exactly 0 is 0.
Var abs(const Var& x);
/// ln(1 + e^x), evaluated without overflow.
Var softplus(const Var& x);

inline double relu(double x) { return x > 0.0 ? x : 0.0; }
inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}
inline double value_of(double x) { return x; }
inline double value_of(const Var& x) { return x.value(); }

struct GradCheckResult {
  double max_relative_error = 0.0;
  /// The evaluation passed within one step of a kink; the comparison is void.
  bool near_kink = false;
};

/// Relative error used by every gradient check:
/// |a - f| / max(1e-8, |a| + |f|).
double gradient_relative_error(double analytic, double numeric);

/// Central-difference check of an already-computed gradient. `f` must be
/// finite at every probe (NonFinite otherwise); `step` must lie in [1e-6, 1e-3].
double check_gradient(const std::function<double(std::span<const double>)>& f,
                      std::span<const double> x, std::span<const double> analytic,
                      double step);

/// Records `f` on a fresh tape at `x`, differentiates it, and compares
/// against central differences.
GradCheckResult grad_check(
    const std::function<Var(Tape&, std::span<const Var>)>& f,
    std::span<const double> x, double step);

}  // namespace psinvert
