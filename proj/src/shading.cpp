#include "psinvert/shading.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace psinvert {

std::vector<double> roughness_ladder(int k, double r_top, double r_bottom) {
  if (k < 2 || !(r_bottom > 0.0) || !(r_top > r_bottom) || !std::isfinite(r_top)) {
    throw Error(ErrorKind::BadLadder, "roughness ladder needs k >= 2 and r_top > r_bottom > 0");
  }
  const double log_top = std::log(r_top);
  const double log_span = log_top - std::log(r_bottom);
  std::vector<double> r(static_cast<std::size_t>(k));
  for (int i = 1; i <= k; ++i) {
    r[i - 1] = -std::exp(log_top - log_span * (i - 1) / (k - 1));
  }
  // Pin the endpoints exactly.
  r.front() = -r_top;
  r.back() = -r_bottom;
  return r;
}

double psb_weight(double alpha, int i) {
  const double d = alpha - i;
  if (d < 0.0) return 0.0;
  if (d < 1.0) return (1.0 - std::cos(d * std::numbers::pi)) / 2.0;
  return 1.0;
}

std::vector<double> psb_weights(double alpha, int k) {
  if (!(alpha >= 0.0 && alpha <= k)) {
    throw Error(ErrorKind::OutOfRange, "PSB level must lie in [0, k]");
  }
  // Basis i ramps over [i, i + 1], so the level is stretched onto [0, k + 1]
  // to have every basis fully on at alpha = k.
  const double level = alpha * (k + 1) / k;
  std::vector<double> w(static_cast<std::size_t>(k));
  for (int i = 1; i <= k; ++i) w[i - 1] = psb_weight(level, i);
  return w;
}

SpecularBasisBank::SpecularBasisBank(std::vector<double> roughness, bool trainable)
    : roughness_(std::move(roughness)), trainable_(trainable) {
  if (roughness_.empty()) throw Error(ErrorKind::BadLadder, "specular bank needs at least one basis");
  for (std::size_t i = 0; i < roughness_.size(); ++i) {
    if (!(roughness_[i] < 0.0) || !std::isfinite(roughness_[i])) {
      throw Error(ErrorKind::BadLadder, "roughness values must be finite and negative");
    }
    if (i > 0 && !(roughness_[i] > roughness_[i - 1])) {
      throw Error(ErrorKind::BadLadder, "roughness values must run from shiniest to roughest");
    }
  }
}

UnitVec3 half_vector(const UnitVec3& v, const UnitVec3& l) {
  return normalize(v.vec() + l.vec());
}

double specular_response(const UnitVec3& n, const UnitVec3& h, const Material& material,
                         const SpecularBasisBank& bank, double alpha) {
  if (material.specular.size() != static_cast<std::size_t>(bank.k())) {
    throw Error(ErrorKind::ShapeMismatch, "material and specular bank disagree on k");
  }
  const std::vector<double> w = psb_weights(alpha, bank.k());
  return specular_response<double, double>(n.vec(), h.vec(), material.specular, bank.roughness(), w);
}

double render_pixel(const UnitVec3& n, const Material& material, const Light& light,
                    const UnitVec3& view, const SpecularBasisBank& bank, double alpha) {
  if (material.specular.size() != static_cast<std::size_t>(bank.k())) {
    throw Error(ErrorKind::ShapeMismatch, "material and specular bank disagree on k");
  }
  const std::vector<double> w = psb_weights(alpha, bank.k());
  return render_pixel<double, double>(n.vec(), material.diffuse, material.specular,
                                      light.direction.vec(), light.intensity(), view.vec(),
                                      bank.roughness(), w);
}

UnitVec3 specular_spike_view(const UnitVec3& n, const UnitVec3& l) {
  return normalize(2.0 * dot(l.vec(), n.vec()) * n.vec() - l.vec());
}

Image render_image(const NormalMap& normals, const Grid<Material>& materials, const Light& light,
                   const SpecularBasisBank& bank, double alpha, const Mask& mask,
                   const UnitVec3& view) {
  require_same_shape(normals, mask, "normal field and mask differ in size");
  require_same_shape(materials, mask, "material field and mask differ in size");
  const std::vector<double> w = psb_weights(alpha, bank.k());
  const double e = light.intensity();
  Image out = Image::Zero(mask.rows(), mask.cols());
  for (int r = 0; r < mask.rows(); ++r) {
    for (int c = 0; c < mask.cols(); ++c) {
      if (!mask(r, c)) continue;
      const Material& m = materials(r, c);
      if (m.specular.size() != static_cast<std::size_t>(bank.k())) {
        throw Error(ErrorKind::ShapeMismatch, "material and specular bank disagree on k");
      }
      out(r, c) = render_pixel<double, double>(normals(r, c), m.diffuse, m.specular,
                                               light.direction.vec(), e, view.vec(),
                                               bank.roughness(), w);
    }
  }
  return out;
}

}  // namespace psinvert
