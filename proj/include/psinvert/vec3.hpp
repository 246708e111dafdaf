#pragma once

#include <Eigen/Core>
#include <cmath>
#include <ostream>

#include "psinvert/autodiff.hpp"
#include "psinvert/error.hpp"

namespace psinvert {

/// Three-vector over any scalar that supports + - * / and sqrt (double or Var).
template <class T>
struct Vec3 {
  T x{}, y{}, z{};

  Vec3() = default;
  Vec3(T x_, T y_, T z_) : x(std::move(x_)), y(std::move(y_)), z(std::move(z_)) {}

  template <class U>
  Vec3<U> cast() const;
};

using Vec3d = Vec3<double>;

template <class S>
inline constexpr bool is_vec3_v = false;
template <class T>
inline constexpr bool is_vec3_v<Vec3<T>> = true;

template <class T>
Vec3<T> operator+(const Vec3<T>& a, const Vec3<T>& b) {
  return {a.x + b.x, a.y + b.y, a.z + b.z};
}
template <class T>
Vec3<T> operator-(const Vec3<T>& a, const Vec3<T>& b) {
  return {a.x - b.x, a.y - b.y, a.z - b.z};
}
template <class T>
Vec3<T> operator-(const Vec3<T>& a) {
  return {-a.x, -a.y, -a.z};
}
template <class T, class S>
  requires(!is_vec3_v<S>)
Vec3<T> operator*(const Vec3<T>& a, const S& s) {
  return {a.x * s, a.y * s, a.z * s};
}
template <class T, class S>
  requires(!is_vec3_v<S>)
Vec3<T> operator*(const S& s, const Vec3<T>& a) {
  return {a.x * s, a.y * s, a.z * s};
}
template <class T, class S>
  requires(!is_vec3_v<S>)
Vec3<T> operator/(const Vec3<T>& a, const S& s) {
  return {a.x / s, a.y / s, a.z / s};
}

template <class T>
T dot(const Vec3<T>& a, const Vec3<T>& b) {
  return a.x * b.x + a.y * b.y + a.z * b.z;
}

template <class T>
Vec3<T> cross(const Vec3<T>& a, const Vec3<T>& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

template <class T>
T norm(const Vec3<T>& a) {
  using std::sqrt;
  return sqrt(dot(a, a));
}

inline constexpr double kDegenerateNorm = 1e-12;

/// a / |a|. Throws DegenerateVector when |a| <= 1e-12.
template <class T>
Vec3<T> normalized(const Vec3<T>& a) {
  T len = norm(a);
  if (!(value_of(len) > kDegenerateNorm)) {
    throw Error(ErrorKind::DegenerateVector, "cannot normalize a vector of length <= 1e-12");
  }
  return a / len;
}

template <class T>
template <class U>
Vec3<U> Vec3<T>::cast() const {
  return {U(x), U(y), U(z)};
}

inline Vec3d value_of(const Vec3<Var>& a) { return {a.x.value(), a.y.value(), a.z.value()}; }
inline const Vec3d& value_of(const Vec3d& a) { return a; }

/// Records `a` as three independent tape inputs.
inline Vec3<Var> make_variables(Tape& tape, const Vec3d& a) {
  return {tape.variable(a.x), tape.variable(a.y), tape.variable(a.z)};
}

inline bool is_finite(const Vec3d& a) {
  return std::isfinite(a.x) && std::isfinite(a.y) && std::isfinite(a.z);
}

inline std::ostream& operator<<(std::ostream& os, const Vec3d& a) {
  return os << '(' << a.x << ", " << a.y << ", " << a.z << ')';
}

/// A Vec3d of unit length (within 1e-6). Only constructible through
/// normalize() or from components already known to be unit length.
class UnitVec3 {
 public:
  static constexpr double kTolerance = 1e-6;

  UnitVec3() : v_{0.0, 0.0, 1.0} {}

  /// Throws DegenerateVector if (x, y, z) is not unit length within tolerance.
  static UnitVec3 from_unit(const Vec3d& v);

  const Vec3d& vec() const { return v_; }
  operator const Vec3d&() const { return v_; }
  double x() const { return v_.x; }
  double y() const { return v_.y; }
  double z() const { return v_.z; }

 private:
  friend UnitVec3 normalize(const Vec3d& v);
  explicit UnitVec3(const Vec3d& v) : v_(v) {}
  Vec3d v_;
};

/// Unit vector along `v`. Throws DegenerateVector if |v| <= 1e-12.
UnitVec3 normalize(const Vec3d& v);

/// Angle between two directions in degrees; argument to acos is clamped.
double angle_deg(const Vec3d& a, const Vec3d& b);

inline const Vec3d kViewDirection{0.0, 0.0, 1.0};

inline Eigen::Vector3d to_eigen(const Vec3d& a) { return {a.x, a.y, a.z}; }
inline Vec3d from_eigen(const Eigen::Vector3d& a) { return {a.x(), a.y(), a.z()}; }

}  // namespace psinvert
