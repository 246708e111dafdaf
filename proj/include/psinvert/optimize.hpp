#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "psinvert/data.hpp"
#include "psinvert/field.hpp"
#include "psinvert/shading.hpp"

namespace psinvert {

struct TrainConfig {
  int k = 12;
  double r_top = 300.0;
  double r_bottom = 10.0;
  int epochs = 2000;
  double learning_rate = 1e-3;
  int images_per_iteration = 8;
  int pixels_per_iteration = 2048;
  /// Progressive specular bases; when off, every basis is active from epoch 0.
  bool psb = true;
  double psb_fraction = 0.5;
  bool trainable_roughness = false;
  /// When off, the initial lights are kept fixed (calibrated photometric stereo).
  bool train_lights = true;
  /// Step-size multiplier for the light table relative to the network weights.
  double light_lr_scale = 30.0;
  double lambda_smooth = 0.1;
  double lambda_contour = 0.05;
  double early_prior_fraction = 0.5;
  std::uint64_t seed = 0;

  int encoding_levels = 10;
  int hidden_width = 256;
  int normal_layers = 8;
  int material_layers = 12;

  LightInit light_init = LightInit::parse("view-jitter:5");
  int threads = 1;
  /// Full-field ground-truth metrics are logged every this many epochs.
  int metrics_interval = 10;

  /// Throws BadConfig on any out-of-range field.
  void validate() const;
};

/// Sets one field from its snake_case (or kebab-case) name. Throws BadConfig
/// on unknown keys or unparsable values.
void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value);

/// Applies a file of `key = value` lines ('#' starts a comment).
void load_config_file(TrainConfig& cfg, const std::filesystem::path& path);

/// Every field as (name, value-as-text), in declaration order.
std::vector<std::pair<std::string, std::string>> config_entries(const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Loss pieces

/// Mean absolute difference. Throws EmptyBatch / ShapeMismatch.
double photometric_loss(std::span<const double> observed, std::span<const double> rendered);

/// k * min(1, epoch / (psb_fraction * epochs)); k throughout when PSB is off.
double alpha_schedule(int epoch, const TrainConfig& cfg);

struct ContourTerm {
  std::size_t index;  // into the normal list
  Vec3d outward;      // unit (x, y, 0)
};

/// lambda_smooth * mean(1 - n_p.n_q) + lambda_contour * mean(1 - n_c.c), or 0
/// once epoch >= early_prior_fraction * epochs. Empty sets contribute 0.
template <class T>
T early_priors(std::span<const Vec3<T>> normals,
               std::span<const std::pair<std::size_t, std::size_t>> pairs,
               std::span<const ContourTerm> contour, int epoch, const TrainConfig& cfg);

bool early_priors_active(int epoch, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Adam

/// Bias-corrected Adam over a fixed list of parameter blocks.
class AdamState {
 public:
  AdamState(double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8)
      : beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

  std::int64_t step_count() const { return t_; }

  /// One update of every block in place. Throws NonFiniteGradient (and leaves
  /// parameters and moments untouched) if any gradient entry is not finite.
  /// `scales`, when given, multiplies `lr` per block.
  void step(std::span<Eigen::VectorXd* const> params, std::span<const Eigen::VectorXd* const> grads,
            double lr, std::span<const double> scales = {});

 private:
  double beta1_, beta2_, epsilon_;
  std::int64_t t_ = 0;
  std::vector<Eigen::VectorXd> m_, v_;
};

inline void adam_step(AdamState& state, std::span<Eigen::VectorXd* const> params,
                      std::span<const Eigen::VectorXd* const> grads, double lr,
                      std::span<const double> scales = {}) {
  state.step(params, grads, lr, scales);
}

// ---------------------------------------------------------------------------
// Model

/// Every trainable quantity of a reconstruction.
struct Model {
  PositionalEncoder encoder;
  CoordinateFrame frame;
  Mlp normal_net;
  Mlp material_net;
  LightTable lights;
  /// r_i = -exp(log_roughness_i).
  Eigen::VectorXd log_roughness;
  bool trainable_roughness = false;

  /// Fresh networks for `mask` and the given config; lights come from the
  /// caller. The normal head starts facing the camera and specular albedos
  /// start small.
  static Model create(const TrainConfig& cfg, const Mask& mask, LightTable lights);

  int k() const { return static_cast<int>(log_roughness.size()); }
  std::vector<double> roughness() const;
  SpecularBasisBank bank() const;
};

struct Batch {
  std::vector<Pixel> pixels;
  std::vector<int> images;
};

struct ModelGradient {
  double loss = 0.0;
  double photometric = 0.0;
  double prior = 0.0;
  Eigen::VectorXd normal_net;
  Eigen::VectorXd material_net;
  Eigen::VectorXd lights;
  Eigen::VectorXd log_roughness;  // zero unless roughness is trainable

  bool all_finite() const;
};

/// Precomputed contour directions for the mask (pixel -> outward 2-D direction).
struct ContourMap {
  int cols = 0;
  std::vector<std::pair<std::size_t, Vec3d>> entries;  // key = row * cols + col

  static ContourMap build(const Mask& mask);
  const Vec3d* find(const Pixel& p) const;
};

/// Photometric loss on `batch` plus early priors (when `priors` is true) and
/// its gradient with respect to every trainable block.
ModelGradient loss_and_gradient(const Model& model, const PhotometricDataset& dataset,
                                const Batch& batch, double alpha, bool priors,
                                const ContourMap& contour, const TrainConfig& cfg, int threads = 1);

/// Loss only (same value as loss_and_gradient().loss).
double batch_loss(const Model& model, const PhotometricDataset& dataset, const Batch& batch,
                  double alpha, bool priors, const ContourMap& contour, const TrainConfig& cfg);

struct FieldEstimate {
  NormalMap normals;
  Grid<Material> materials;
};

/// Normals and materials at every mask pixel (zero elsewhere).
FieldEstimate evaluate_fields(const Model& model, const Mask& mask);

/// Re-rendered images for every light, every basis fully active.
std::vector<Image> render_model(const Model& model, const FieldEstimate& fields, const Mask& mask);

/// Mean absolute error over all mask pixels of all images.
double full_image_loss(const std::vector<Image>& rendered, const PhotometricDataset& dataset);

/// PSNR over the mask pixels of all images together (peak 1).
double full_image_psnr(const std::vector<Image>& rendered, const PhotometricDataset& dataset);

// ---------------------------------------------------------------------------
// Reconstruction

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double alpha = 0.0;
  int skipped = 0;
  std::optional<double> normal_mae;
  std::optional<double> dir_mae;
  std::optional<double> int_err;
};

struct Solution {
  Model model;
  FieldEstimate fields;
  LightTable lights;
  SpecularBasisBank bank;
  std::vector<EpochLog> log;
  int skipped_iterations = 0;
  double initial_full_loss = 0.0;
  double final_full_loss = 0.0;
  double final_psnr = 0.0;
  std::optional<double> initial_normal_mae;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Joint optimization of normals, materials, lights (and roughness when
/// enabled). Throws TooFewImages (n < 4) and EmptyMask.
Solution reconstruct(const PhotometricDataset& dataset, const TrainConfig& cfg,
                     const EpochCallback& on_epoch = {});

/// Same, starting from an explicit light table.
Solution reconstruct(const PhotometricDataset& dataset, const TrainConfig& cfg,
                     LightTable initial_lights, const EpochCallback& on_epoch = {});

}  // namespace psinvert
