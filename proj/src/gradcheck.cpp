#include "psinvert/gradcheck.hpp"

#include <random>

#include "psinvert/autodiff.hpp"
#include "psinvert/data.hpp"
#include "psinvert/optimize.hpp"

namespace psinvert {

namespace {

struct Trial {
  SyntheticScene scene;
  TrainConfig cfg;
  Model model;
  Batch batch;
  ContourMap contour;
  double alpha = 0.0;
  bool priors = false;
};

Trial make_trial(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

  SynthSceneSpec spec;
  spec.height = spec.width = 12;
  spec.radius = 5.0;
  spec.k = pick(2, 4);
  spec.light_count = 4;
  spec.specular_a = {0.3 + u(rng), 0.2 * u(rng)};
  spec.specular_b = {0.0, 0.5 * u(rng)};
  spec.seed = rng();

  Trial t;
  t.scene = synth_scene(spec);
  t.cfg.k = spec.k;
  t.cfg.encoding_levels = pick(1, 4);
  t.cfg.hidden_width = pick(4, 12);
  t.cfg.normal_layers = pick(2, 4);
  t.cfg.material_layers = pick(2, 4);
  t.cfg.trainable_roughness = u(rng) < 0.5;
  t.cfg.seed = rng();
  t.alpha = t.cfg.k * u(rng);
  t.priors = u(rng) < 0.5;

  LightTable lights = perturb_lights(*t.scene.dataset.gt_lights, 20.0, rng());
  for (int j = 0; j < lights.size(); ++j) {
    lights.params()(4 * j + 3) = 0.3 * (u(rng) - 0.5);
    for (int q = 0; q < 3; ++q) lights.params()(4 * j + q) *= 0.8 + 0.4 * u(rng);
  }
  t.model = Model::create(t.cfg, t.scene.dataset.mask, lights);
  for (int i = 0; i < t.cfg.k; ++i) t.model.log_roughness(i) += 0.2 * (u(rng) - 0.5);
  t.contour = ContourMap::build(t.scene.dataset.mask);

  for (const Pixel& p : masked_pixels(t.scene.dataset.mask))
    if (u(rng) < 0.5) t.batch.pixels.push_back(p);
  if (t.batch.pixels.empty()) t.batch.pixels.push_back(masked_pixels(t.scene.dataset.mask).front());
  for (int j = 0; j < 4; ++j)
    if (u(rng) < 0.7) t.batch.images.push_back(j);
  if (t.batch.images.empty()) t.batch.images.push_back(pick(0, 3));
  return t;
}

}  // namespace

PipelineCheckReport pipeline_gradient_check(const PipelineCheckOptions& opt) {
  PipelineCheckReport rep;
  std::mt19937_64 rng(opt.seed);
  for (int trial = 0; trial < opt.trials; ++trial) {
    Trial t = make_trial(rng);
    const ModelGradient g = loss_and_gradient(t.model, t.scene.dataset, t.batch, t.alpha, t.priors,
                                              t.contour, t.cfg);
    auto loss = [&] {
      return batch_loss(t.model, t.scene.dataset, t.batch, t.alpha, t.priors, t.contour, t.cfg);
    };
    auto check_block = [&](Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
      std::uniform_int_distribution<Eigen::Index> which(0, params.size() - 1);
      for (int c = 0; c < opt.coords_per_block; ++c) {
        const Eigen::Index i = which(rng);
        const double x = params(i);
        auto diff = [&](double h) {
          params(i) = x + h;
          const double up = loss();
          params(i) = x - h;
          const double down = loss();
          params(i) = x;
          return (up - down) / (2.0 * h);
        };
        const double fd = diff(opt.step);
        const double fd_half = diff(0.5 * opt.step);
        ++rep.checked;
        if (gradient_relative_error(fd, fd_half) > 1e-5) {
          ++rep.near_kink;
          continue;
        }
        rep.max_relative_error = std::max(rep.max_relative_error, gradient_relative_error(grad(i), fd));
      }
    };
    check_block(t.model.normal_net.params(), g.normal_net);
    check_block(t.model.material_net.params(), g.material_net);
    check_block(t.model.lights.params(), g.lights);
    if (t.cfg.trainable_roughness) check_block(t.model.log_roughness, g.log_roughness);
    ++rep.trials;
  }
  return rep;
}

}  // namespace psinvert
