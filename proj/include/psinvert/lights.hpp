#pragma once

#include <Eigen/Core>
#include <vector>

#include "psinvert/shading.hpp"
#include "psinvert/vec3.hpp"

namespace psinvert {

/// Per-image distant lights stored as free optimization variables: a raw
/// direction d_j (any nonzero 3-vector) and a log-intensity xi_j. The readouts
/// l_j = d_j / |d_j| and e_j = exp(xi_j) are always unit and positive.
///
/// Storage is one flat vector, four entries per light: [dx, dy, dz, xi].
class LightTable {
 public:
  static constexpr int kStride = 4;
  static constexpr double kMinRawNorm = 1e-6;

  LightTable() = default;
  explicit LightTable(int count);

  static LightTable from_lights(const std::vector<Light>& lights);

  int size() const { return static_cast<int>(params_.size() / kStride); }

  UnitVec3 direction(int j) const;
  double intensity(int j) const { return std::exp(params_(kStride * j + 3)); }
  double log_intensity(int j) const { return params_(kStride * j + 3); }
  Vec3d raw_direction(int j) const;
  Light light(int j) const { return {direction(j), log_intensity(j)}; }

  void set_direction(int j, const Vec3d& d);
  void set_intensity(int j, double e);

  Eigen::VectorXd& params() { return params_; }
  const Eigen::VectorXd& params() const { return params_; }

  /// Rescales any raw direction whose norm fell below kMinRawNorm (or grew
  /// non-finite) back to unit length; returns how many were touched.
  int guard();

 private:
  Eigen::VectorXd params_;
};

}  // namespace psinvert
