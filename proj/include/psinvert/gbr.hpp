#pragma once

// Generalized bas-relief transforms and the oracles built on them.
//
// A GBR transform G = [1 0 0; 0 1 0; mu nu lambda] maps scaled normals
// b = rho_d n to G^-T b and scaled lights s = e l to G s. The Lambertian
// image b^T s is unchanged by every such G; a specular term is not.

#include <Eigen/Dense>
#include <span>
#include <utility>
#include <vector>

#include "psinvert/vec3.hpp"

namespace psinvert {

struct GbrParams {
  double mu = 0.0;
  double nu = 0.0;
  double lambda = 1.0;
};

struct GbrMatrices {
  Eigen::Matrix3d G;
  Eigen::Matrix3d inverse;
  Eigen::Matrix3d inverse_transpose;
};

/// Throws SingularG if lambda == 0.
GbrMatrices gbr_matrix(const GbrParams& g);

/// (G^-T b, G s). Throws SingularG if lambda == 0.
std::pair<Eigen::Vector3d, Eigen::Vector3d> gbr_transform(const GbrParams& g,
                                                          const Eigen::Vector3d& b,
                                                          const Eigen::Vector3d& s);

/// Rotation by pi about the view axis applied to both b and s, i.e. the
/// lambda = -1 member of the GBR family composed with a global sign change.
/// Leaves every diffuse and specular observation unchanged.
std::pair<Eigen::Vector3d, Eigen::Vector3d> convex_concave_flip(const Eigen::Vector3d& b,
                                                                const Eigen::Vector3d& s);

/// Intensity of an illuminated point after transforming (b, s) by g:
///
///   b^ . s^ + |s^| * sum_i rho_s_i exp(r_i (1 - n^ . h^)) * (n^ . l^)
///
/// with n^ = b^/|b^|, l^ = s^/|s^| and h^ the half vector of v and l^.
/// No attached-shadow clamp is applied.
double gbr_render(const GbrParams& g, const Eigen::Vector3d& b, const Eigen::Vector3d& s,
                  std::span<const double> specular, std::span<const double> roughness,
                  const Eigen::Vector3d& view = Eigen::Vector3d::UnitZ());

/// Single-lobe convenience overload.
double gbr_render(const GbrParams& g, const Eigen::Vector3d& b, const Eigen::Vector3d& s,
                  double specular, double roughness,
                  const Eigen::Vector3d& view = Eigen::Vector3d::UnitZ());

/// Least-squares B (3 x p) with M ~= B^T S for M (p x n), S (3 x n).
/// Per pixel, entries below `shadow_threshold` are dropped; a pixel with fewer
/// than three usable lights of rank 3 gets a zero column.
/// Throws RankDeficientLights when rank(S) < 3.
Eigen::Matrix3Xd lambertian_solve(const Eigen::MatrixXd& M, const Eigen::Matrix3Xd& S,
                                  double shadow_threshold = 1e-6);

/// Everything the brute-force GBR search needs about a scene with known truth.
struct GbrScene {
  Eigen::Matrix3Xd B;          // 3 x p scaled normals
  Eigen::Matrix3Xd S;          // 3 x n scaled lights
  Eigen::MatrixXd specular;    // k x p specular albedos
  std::vector<double> roughness;
  Eigen::MatrixXd observed;    // p x n
  Eigen::Vector3d view = Eigen::Vector3d::UnitZ();
};

struct GbrGrid {
  std::vector<double> mu;
  std::vector<double> nu;
  std::vector<double> lambda;

  /// `count` values per axis over the given closed ranges: mu and nu evenly
  /// spaced, lambda geometrically spaced so that a range symmetric about 1 in
  /// log scale has lambda = 1 at its centre for odd counts.
  static GbrGrid regular(int count, double mu_lo, double mu_hi, double lambda_lo,
                         double lambda_hi);
};

struct GbrCell {
  GbrParams params;
  double loss = 0.0;
};

struct GbrSurface {
  std::vector<GbrCell> cells;  // mu-major, then nu, then lambda
  std::size_t argmin = 0;

  const GbrCell& best() const { return cells[argmin]; }
};

/// Mean absolute error between `observed` and the transformed re-render, over
/// entries that are illuminated in the untransformed scene, for every grid cell.
GbrSurface gbr_grid_search(const GbrScene& scene, const GbrGrid& grid, int threads = 1);

struct SyntheticScene;

/// Ground-truth (b, s) pairs of a synthetic scene over its mask pixels.
GbrScene gbr_scene(const SyntheticScene& scene);

}  // namespace psinvert
