#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "psinvert/autodiff.hpp"
#include "psinvert/error.hpp"
#include "psinvert/vec3.hpp"

namespace psinvert {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DegenerateVector: return "DegenerateVector";
    case ErrorKind::ForeignVar: return "ForeignVar";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::BadLadder: return "BadLadder";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::SingularG: return "SingularG";
    case ErrorKind::RankDeficientLights: return "RankDeficientLights";
    case ErrorKind::OutOfRange: return "OutOfRange";
    case ErrorKind::MissingGroundTruth: return "MissingGroundTruth";
    case ErrorKind::FileFormat: return "FileFormat";
    case ErrorKind::MissingFile: return "MissingFile";
    case ErrorKind::CountMismatch: return "CountMismatch";
    case ErrorKind::BadSpec: return "BadSpec";
    case ErrorKind::BadConfig: return "BadConfig";
    case ErrorKind::EmptyBatch: return "EmptyBatch";
    case ErrorKind::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorKind::TooFewImages: return "TooFewImages";
    case ErrorKind::EmptyMask: return "EmptyMask";
    case ErrorKind::DegenerateEstimate: return "DegenerateEstimate";
  }
  return "Unknown";
}

// ---------------------------------------------------------------------------
// Tape

Var Tape::variable(double value) {
  nodes_.push_back({value, {kNoParent, kNoParent}, {0.0, 0.0}});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

void Tape::check_owned(const Var& v) const {
  if (v.tape() != this) {
    throw Error(ErrorKind::ForeignVar, "variable belongs to a different tape");
  }
}

Var Tape::unary(double value, const Var& a, double da) {
  check_owned(a);
  nodes_.push_back({value, {a.index(), kNoParent}, {da, 0.0}});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::binary(double value, const Var& a, double da, const Var& b, double db) {
  check_owned(a);
  check_owned(b);
  nodes_.push_back({value, {a.index(), b.index()}, {da, db}});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

void Tape::clear() {
  nodes_.clear();
  kink_distance_ = std::numeric_limits<double>::infinity();
}

void Tape::note_kink(double distance) { kink_distance_ = std::min(kink_distance_, distance); }

void Tape::backward(const Var& output, std::vector<double>& adjoint) const {
  check_owned(output);
  adjoint.assign(nodes_.size(), 0.0);
  adjoint[output.index()] = 1.0;
  for (std::size_t i = output.index() + 1; i-- > 0;) {
    const double a = adjoint[i];
    if (a == 0.0) continue;
    const Node& node = nodes_[i];
    if (node.parent[0] != kNoParent) adjoint[node.parent[0]] += a * node.partial[0];
    if (node.parent[1] != kNoParent) adjoint[node.parent[1]] += a * node.partial[1];
  }
}

double Gradients::operator[](const Var& v) const {
  tape_->check_owned(v);
  return adjoint_[v.index()];
}

Gradients backward(const Tape& tape, const Var& output) {
  std::vector<double> adjoint;
  tape.backward(output, adjoint);
  return Gradients(tape, std::move(adjoint));
}

// ---------------------------------------------------------------------------
// Elementary operations

namespace {

Tape& tape_of(const Var& a) {
  if (a.tape() == nullptr) throw Error(ErrorKind::ForeignVar, "variable is not attached to a tape");
  return *const_cast<Tape*>(a.tape());
}

Tape& tape_of(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw Error(ErrorKind::ForeignVar, "operands belong to different tapes");
  return tape_of(a);
}

}  // namespace

Var operator+(const Var& a, const Var& b) {
  return tape_of(a, b).binary(a.value() + b.value(), a, 1.0, b, 1.0);
}
Var operator-(const Var& a, const Var& b) {
  return tape_of(a, b).binary(a.value() - b.value(), a, 1.0, b, -1.0);
}
Var operator*(const Var& a, const Var& b) {
  return tape_of(a, b).binary(a.value() * b.value(), a, b.value(), b, a.value());
}
Var operator/(const Var& a, const Var& b) {
  const double inv = 1.0 / b.value();
  const double q = a.value() * inv;
  return tape_of(a, b).binary(q, a, inv, b, -q * inv);
}
Var operator-(const Var& a) { return tape_of(a).unary(-a.value(), a, -1.0); }

Var operator+(const Var& a, double b) { return tape_of(a).unary(a.value() + b, a, 1.0); }
Var operator+(double a, const Var& b) { return b + a; }
Var operator-(const Var& a, double b) { return tape_of(a).unary(a.value() - b, a, 1.0); }
Var operator-(double a, const Var& b) { return tape_of(b).unary(a - b.value(), b, -1.0); }
Var operator*(const Var& a, double b) { return tape_of(a).unary(a.value() * b, a, b); }
Var operator*(double a, const Var& b) { return b * a; }
Var operator/(const Var& a, double b) { return tape_of(a).unary(a.value() / b, a, 1.0 / b); }
Var operator/(double a, const Var& b) {
  const double q = a / b.value();
  return tape_of(b).unary(q, b, -q / b.value());
}

Var exp(const Var& x) {
  const double e = std::exp(x.value());
  return tape_of(x).unary(e, x, e);
}
Var log(const Var& x) { return tape_of(x).unary(std::log(x.value()), x, 1.0 / x.value()); }
Var sqrt(const Var& x) {
  const double s = std::sqrt(x.value());
  return tape_of(x).unary(s, x, 0.5 / s);
}
Var cos(const Var& x) { return tape_of(x).unary(std::cos(x.value()), x, -std::sin(x.value())); }
Var sin(const Var& x) { return tape_of(x).unary(std::sin(x.value()), x, std::cos(x.value())); }

Var relu(const Var& x) {
  Tape& t = tape_of(x);
  t.note_kink(std::abs(x.value()));
  return x.value() > 0.0 ? t.unary(x.value(), x, 1.0) : t.unary(0.0, x, 0.0);
}

Var abs(const Var& x) {
  Tape& t = tape_of(x);
  t.note_kink(std::abs(x.value()));
  const double v = x.value();
  return t.unary(std::abs(v), x, v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0));
}

Var softplus(const Var& x) {
  const double v = x.value();
  const double sigmoid = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  return tape_of(x).unary(softplus(v), x, sigmoid);
}

// ---------------------------------------------------------------------------
// Gradient checking

double gradient_relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

double check_gradient(const std::function<double(std::span<const double>)>& f,
                      std::span<const double> x, std::span<const double> analytic,
                      double step) {
  if (!(step >= 1e-6 && step <= 1e-3)) {
    throw Error(ErrorKind::OutOfRange, "finite-difference step must lie in [1e-6, 1e-3]");
  }
  if (analytic.size() != x.size()) {
    throw Error(ErrorKind::ShapeMismatch, "gradient and parameter sizes differ");
  }
  std::vector<double> probe(x.begin(), x.end());
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + step;
    const double up = f(probe);
    probe[i] = x[i] - step;
    const double down = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(up) || !std::isfinite(down) || !std::isfinite(analytic[i])) {
      throw Error(ErrorKind::NonFinite, "non-finite value during gradient check");
    }
    worst = std::max(worst, gradient_relative_error(analytic[i], (up - down) / (2.0 * step)));
  }
  return worst;
}

GradCheckResult grad_check(const std::function<Var(Tape&, std::span<const Var>)>& f,
                           std::span<const double> x, double step) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(x.size());
  for (double xi : x) leaves.push_back(tape.variable(xi));
  const Var out = f(tape, leaves);
  if (!std::isfinite(out.value())) throw Error(ErrorKind::NonFinite, "non-finite function value");

  GradCheckResult result;
  result.near_kink = tape.kink_distance() <= step;

  const Gradients grads = backward(tape, out);
  std::vector<double> analytic;
  analytic.reserve(x.size());
  for (const Var& leaf : leaves) analytic.push_back(grads[leaf]);

  auto evaluate = [&](std::span<const double> p) {
    Tape probe_tape;
    std::vector<Var> probe_leaves;
    probe_leaves.reserve(p.size());
    for (double pi : p) probe_leaves.push_back(probe_tape.variable(pi));
    const double v = f(probe_tape, probe_leaves).value();
    if (probe_tape.kink_distance() <= step) result.near_kink = true;
    return v;
  };
  result.max_relative_error = check_gradient(evaluate, x, analytic, step);
  return result;
}

// ---------------------------------------------------------------------------
// Unit vectors

UnitVec3 UnitVec3::from_unit(const Vec3d& v) {
  const double len = norm(v);
  if (!is_finite(v) || std::abs(len - 1.0) > kTolerance) {
    throw Error(ErrorKind::DegenerateVector, "vector is not unit length");
  }
  return UnitVec3(v);
}

UnitVec3 normalize(const Vec3d& v) {
  if (!is_finite(v)) throw Error(ErrorKind::DegenerateVector, "cannot normalize a non-finite vector");
  return UnitVec3(normalized(v));
}

double angle_deg(const Vec3d& a, const Vec3d& b) {
  const double c = std::clamp(dot(a, b) / (norm(a) * norm(b)), -1.0, 1.0);
  return std::acos(c) * 180.0 / M_PI;
}

}  // namespace psinvert
