#include "psinvert/gbr.hpp"

#include <cmath>
#include <limits>
#include <utility>

#include "psinvert/data.hpp"
#include "psinvert/parallel.hpp"
#include "psinvert/shading.hpp"

namespace psinvert {

GbrMatrices gbr_matrix(const GbrParams& g) {
  if (g.lambda == 0.0 || !std::isfinite(g.lambda)) {
    throw Error(ErrorKind::SingularG, "GBR lambda must be nonzero");
  }
  GbrMatrices out;
  out.G << 1.0, 0.0, 0.0,
           0.0, 1.0, 0.0,
           g.mu, g.nu, g.lambda;
  out.inverse << 1.0, 0.0, 0.0,
                 0.0, 1.0, 0.0,
                 -g.mu / g.lambda, -g.nu / g.lambda, 1.0 / g.lambda;
  out.inverse_transpose = out.inverse.transpose();
  return out;
}

std::pair<Eigen::Vector3d, Eigen::Vector3d> gbr_transform(const GbrParams& g,
                                                          const Eigen::Vector3d& b,
                                                          const Eigen::Vector3d& s) {
  const GbrMatrices m = gbr_matrix(g);
  return {m.inverse_transpose * b, m.G * s};
}

std::pair<Eigen::Vector3d, Eigen::Vector3d> convex_concave_flip(const Eigen::Vector3d& b,
                                                                const Eigen::Vector3d& s) {
  const Eigen::Vector3d flip(-1.0, -1.0, 1.0);
  return {b.cwiseProduct(flip), s.cwiseProduct(flip)};
}

namespace {

double transformed_render(const Eigen::Vector3d& b_hat, const Eigen::Vector3d& s_hat,
                          std::span<const double> specular, std::span<const double> roughness,
                          const Eigen::Vector3d& view) {
  const double b_len = b_hat.norm();
  const double s_len = s_hat.norm();
  if (!(b_len > kDegenerateNorm) || !(s_len > kDegenerateNorm)) {
    throw Error(ErrorKind::DegenerateVector, "transformed normal or light has zero length");
  }
  const Vec3d n = from_eigen(b_hat / b_len);
  const Vec3d l = from_eigen(s_hat / s_len);
  const Vec3d h = half_vector(from_eigen(view), l);
  double spec = 0.0;
  for (std::size_t i = 0; i < specular.size(); ++i) {
    spec += specular[i] * std::exp(roughness[i] * (1.0 - dot(n, h)));
  }
  return b_hat.dot(s_hat) + s_len * spec * dot(n, l);
}

}  // namespace

double gbr_render(const GbrParams& g, const Eigen::Vector3d& b, const Eigen::Vector3d& s,
                  std::span<const double> specular, std::span<const double> roughness,
                  const Eigen::Vector3d& view) {
  if (specular.size() != roughness.size()) {
    throw Error(ErrorKind::ShapeMismatch, "specular albedos and roughness differ in length");
  }
  const auto [b_hat, s_hat] = gbr_transform(g, b, s);
  return transformed_render(b_hat, s_hat, specular, roughness, view);
}

double gbr_render(const GbrParams& g, const Eigen::Vector3d& b, const Eigen::Vector3d& s,
                  double specular, double roughness, const Eigen::Vector3d& view) {
  return gbr_render(g, b, s, std::span<const double>(&specular, 1),
                    std::span<const double>(&roughness, 1), view);
}

Eigen::Matrix3Xd lambertian_solve(const Eigen::MatrixXd& M, const Eigen::Matrix3Xd& S,
                                  double shadow_threshold) {
  if (M.cols() != S.cols()) {
    throw Error(ErrorKind::ShapeMismatch, "measurement columns must match light count");
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> full(S.transpose());
  if (S.cols() < 3 || full.rank() < 3) {
    throw Error(ErrorKind::RankDeficientLights, "light matrix has rank below 3");
  }

  Eigen::Matrix3Xd B = Eigen::Matrix3Xd::Zero(3, M.rows());
  for (Eigen::Index p = 0; p < M.rows(); ++p) {
    std::vector<Eigen::Index> lit;
    for (Eigen::Index j = 0; j < M.cols(); ++j)
      if (M(p, j) >= shadow_threshold) lit.push_back(j);
    if (lit.size() == static_cast<std::size_t>(M.cols())) {
      B.col(p) = full.solve(M.row(p).transpose());
      continue;
    }
    if (lit.size() < 3) continue;
    Eigen::MatrixXd A(static_cast<Eigen::Index>(lit.size()), 3);
    Eigen::VectorXd m(static_cast<Eigen::Index>(lit.size()));
    for (std::size_t i = 0; i < lit.size(); ++i) {
      A.row(static_cast<Eigen::Index>(i)) = S.col(lit[i]).transpose();
      m(static_cast<Eigen::Index>(i)) = M(p, lit[i]);
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
    if (qr.rank() < 3) continue;
    B.col(p) = qr.solve(m);
  }
  return B;
}

GbrGrid GbrGrid::regular(int count, double mu_lo, double mu_hi, double lambda_lo,
                         double lambda_hi) {
  if (count < 1 || !(lambda_lo > 0.0) || !(lambda_hi >= lambda_lo) || !(mu_hi >= mu_lo))
    throw Error(ErrorKind::BadSpec, "GBR grid needs count >= 1, ordered ranges and lambda > 0");
  auto axis = [count](double lo, double hi) {
    std::vector<double> v(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) v[i] = count == 1 ? lo : lo + (hi - lo) * i / (count - 1);
    return v;
  };
  std::vector<double> lambda = axis(std::log(lambda_lo), std::log(lambda_hi));
  for (double& l : lambda) l = std::exp(l);
  // exact endpoints, and an exact 1 where the range is log-symmetric
  if (count > 1) {
    lambda.front() = lambda_lo;
    lambda.back() = lambda_hi;
  }
  if (count % 2 == 1 && std::abs(lambda_lo * lambda_hi - 1.0) < 1e-12) lambda[count / 2] = 1.0;
  return {axis(mu_lo, mu_hi), axis(mu_lo, mu_hi), std::move(lambda)};
}

GbrSurface gbr_grid_search(const GbrScene& scene, const GbrGrid& grid, int threads) {
  const Eigen::Index p = scene.B.cols();
  const Eigen::Index n = scene.S.cols();
  if (scene.observed.rows() != p || scene.observed.cols() != n ||
      scene.specular.cols() != p ||
      scene.specular.rows() != static_cast<Eigen::Index>(scene.roughness.size())) {
    throw Error(ErrorKind::ShapeMismatch, "GBR scene arrays disagree in size");
  }

  // Entries lit in the untransformed scene.
  std::vector<std::pair<Eigen::Index, Eigen::Index>> lit;
  for (Eigen::Index i = 0; i < p; ++i) {
    if (!(scene.B.col(i).norm() > kDegenerateNorm)) continue;
    for (Eigen::Index j = 0; j < n; ++j)
      if (scene.B.col(i).dot(scene.S.col(j)) > 0.0) lit.emplace_back(i, j);
  }
  if (lit.empty()) throw Error(ErrorKind::EmptyBatch, "no illuminated entries in GBR scene");

  GbrSurface surface;
  for (double mu : grid.mu)
    for (double nu : grid.nu)
      for (double lambda : grid.lambda) surface.cells.push_back({{mu, nu, lambda}, 0.0});

  const std::vector<double>& rough = scene.roughness;
  parallel_for(surface.cells.size(), threads, [&](std::size_t begin, std::size_t end, int) {
    std::vector<double> spec(rough.size());
    for (std::size_t c = begin; c < end; ++c) {
      const GbrMatrices m = gbr_matrix(surface.cells[c].params);
      const Eigen::Matrix3Xd b_hat = m.inverse_transpose * scene.B;
      const Eigen::Matrix3Xd s_hat = m.G * scene.S;
      double total = 0.0;
      for (const auto& [i, j] : lit) {
        for (std::size_t q = 0; q < spec.size(); ++q)
          spec[q] = scene.specular(static_cast<Eigen::Index>(q), i);
        const double rendered = transformed_render(b_hat.col(i), s_hat.col(j), spec, rough, scene.view);
        total += std::abs(rendered - scene.observed(i, j));
      }
      surface.cells[c].loss = total / static_cast<double>(lit.size());
    }
  });

  double best = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < surface.cells.size(); ++c) {
    if (surface.cells[c].loss < best) {
      best = surface.cells[c].loss;
      surface.argmin = c;
    }
  }
  return surface;
}

GbrScene gbr_scene(const SyntheticScene& synth) {
  const PhotometricDataset& ds = synth.dataset;
  if (!ds.gt_normals || !ds.gt_lights) {
    throw Error(ErrorKind::MissingGroundTruth, "GBR scene needs ground-truth normals and lights");
  }
  const std::vector<Pixel> pixels = masked_pixels(ds.mask);
  const auto p = static_cast<Eigen::Index>(pixels.size());
  const int k = synth.bank.k();
  GbrScene scene;
  scene.B.resize(3, p);
  scene.specular.resize(k, p);
  scene.observed.resize(p, ds.count());
  for (Eigen::Index i = 0; i < p; ++i) {
    const Pixel px = pixels[static_cast<std::size_t>(i)];
    const Material& m = synth.materials(px.row, px.col);
    scene.B.col(i) = m.diffuse * to_eigen((*ds.gt_normals)(px.row, px.col));
    for (int b = 0; b < k; ++b) scene.specular(b, i) = m.specular[static_cast<std::size_t>(b)];
    for (int j = 0; j < ds.count(); ++j) scene.observed(i, j) = ds.images[j](px.row, px.col);
  }
  scene.S.resize(3, ds.count());
  for (int j = 0; j < ds.count(); ++j) {
    scene.S.col(j) = ds.gt_lights->intensity(j) * to_eigen(ds.gt_lights->direction(j).vec());
  }
  const auto r = synth.bank.roughness();
  scene.roughness.assign(r.begin(), r.end());
  scene.view = to_eigen(ds.view.vec());
  return scene;
}

}  // namespace psinvert
