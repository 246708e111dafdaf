#pragma once

// Diffuse + spherical-Gaussian specular image formation for distant lights
// under an orthographic camera:
//
//   m = e * (rho_d + sum_i w_i(alpha) * rho_s_i * exp(r_i * (1 - n.h))) * max(n.l, 0)
//
// with h the half vector of v and l. The templates accept double or Var so the
// same expressions are used for data generation and for differentiation.

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "psinvert/autodiff.hpp"
#include "psinvert/image.hpp"
#include "psinvert/vec3.hpp"

namespace psinvert {

/// k roughness values spaced logarithmically from -r_top to -r_bottom.
/// Requires k >= 2 and r_top > r_bottom > 0 (BadLadder otherwise).
std::vector<double> roughness_ladder(int k, double r_top, double r_bottom);

/// Progressive weight of basis `i` (1-based) at activation level `alpha`.
double psb_weight(double alpha, int i);

/// All k weights at schedule level alpha, with alpha stretched onto [0, k + 1]
/// so that alpha = 0 disables every basis and alpha = k enables all of them.
/// Throws OutOfRange unless 0 <= alpha <= k.
std::vector<double> psb_weights(double alpha, int k);

/// Roughness values of the specular lobes, shiniest first (r_1 most negative).
class SpecularBasisBank {
 public:
  SpecularBasisBank() = default;
  /// Throws BadLadder unless every r_i < 0 and |r_i| is strictly decreasing.
  explicit SpecularBasisBank(std::vector<double> roughness, bool trainable = false);

  static SpecularBasisBank ladder(int k, double r_top, double r_bottom, bool trainable = false) {
    return SpecularBasisBank(roughness_ladder(k, r_top, r_bottom), trainable);
  }

  int k() const { return static_cast<int>(roughness_.size()); }
  std::span<const double> roughness() const { return roughness_; }
  bool trainable() const { return trainable_; }

 private:
  std::vector<double> roughness_;
  bool trainable_ = false;
};

template <class T>
struct BasicMaterial {
  T diffuse{};
  std::vector<T> specular;
};
using Material = BasicMaterial<double>;

/// Distant light; intensity is exp(log_intensity) so it is always positive.
struct Light {
  UnitVec3 direction;
  double log_intensity = 0.0;

  double intensity() const { return std::exp(log_intensity); }
};

/// Unit bisector of v and l. Throws DegenerateVector when v = -l.
template <class T>
Vec3<T> half_vector(const Vec3<T>& v, const Vec3<T>& l) {
  return normalized(v + l);
}

/// Unit bisector of v and l.
UnitVec3 half_vector(const UnitVec3& v, const UnitVec3& l);

/// sum_i w_i * rho_s_i * exp(r_i * (1 - n.h)). Bases with w_i == 0 are skipped,
/// which leaves both the value and every derivative unchanged.
template <class T, class R>
T specular_response(const Vec3<T>& n, const Vec3<T>& h, std::span<const T> albedo,
                    std::span<const R> roughness, std::span<const double> weights) {
  using std::exp;
  const T one_minus = 1.0 - dot(n, h);
  T sum{};
  bool first = true;
  for (std::size_t i = 0; i < albedo.size(); ++i) {
    if (weights[i] == 0.0) continue;
    T term = weights[i] == 1.0 ? albedo[i] * exp(roughness[i] * one_minus)
                               : weights[i] * albedo[i] * exp(roughness[i] * one_minus);
    sum = first ? term : sum + term;
    first = false;
  }
  if (first) return n.x * 0.0;
  return sum;
}

/// Rendered intensity of one surface point under one distant light.
template <class T, class R>
T render_pixel(const Vec3<T>& n, const T& diffuse, std::span<const T> specular,
               const Vec3<T>& light_dir, const T& intensity, const Vec3<T>& view,
               std::span<const R> roughness, std::span<const double> weights) {
  const Vec3<T> h = half_vector(view, light_dir);
  const T rho = diffuse + specular_response(n, h, specular, roughness, weights);
  return intensity * rho * relu(dot(n, light_dir));
}

double specular_response(const UnitVec3& n, const UnitVec3& h, const Material& material,
                         const SpecularBasisBank& bank, double alpha);

double render_pixel(const UnitVec3& n, const Material& material, const Light& light,
                    const UnitVec3& view, const SpecularBasisBank& bank, double alpha);

/// Viewing direction for which `l` is mirrored about `n`: 2(l.n)n - l.
UnitVec3 specular_spike_view(const UnitVec3& n, const UnitVec3& l);

/// Pixel-wise render; pixels outside `mask` are 0. Throws ShapeMismatch.
Image render_image(const NormalMap& normals, const Grid<Material>& materials, const Light& light,
                   const SpecularBasisBank& bank, double alpha, const Mask& mask,
                   const UnitVec3& view = UnitVec3());

}  // namespace psinvert
