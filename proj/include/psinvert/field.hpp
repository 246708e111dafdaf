#pragma once

// Coordinate networks: Fourier-encoded pixel coordinates fed to plain ReLU
// MLPs that output a surface normal or a material per pixel.

#include <Eigen/Core>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "psinvert/autodiff.hpp"
#include "psinvert/image.hpp"
#include "psinvert/lights.hpp"
#include "psinvert/shading.hpp"

namespace psinvert {

struct PhotometricDataset;

class PositionalEncoder {
 public:
  explicit PositionalEncoder(int levels = 10, bool include_raw = true);

  int levels() const { return levels_; }
  bool include_raw() const { return include_raw_; }
  /// 2 * (include_raw) + 4 * levels.
  int width() const { return (include_raw_ ? 2 : 0) + 4 * levels_; }

  /// [x, y, sin(2^j pi x), cos(2^j pi x) ..., sin(2^j pi y), cos(2^j pi y) ...].
  /// Throws OutOfRange if |x| or |y| exceeds 1 + 1e-9.
  Eigen::VectorXd encode(double x, double y) const;
  void encode_into(double x, double y, Eigen::Ref<Eigen::VectorXd> out) const;

 private:
  int levels_;
  bool include_raw_;
};

struct MlpSpec {
  int input = 42;
  int hidden = 256;
  /// Number of affine layers; all but the last are followed by a rectifier.
  int layers = 8;
  int output = 3;

  std::int64_t parameter_count() const;
};

/// Activations saved by Mlp::forward for the backward pass.
struct MlpActivations {
  std::vector<Eigen::MatrixXd> inputs;  // inputs[l] = input to affine layer l
};

/// Fully-connected ReLU network; weights and biases live in one flat vector,
/// layer by layer, each weight matrix column-major (out x in) followed by its
/// bias.
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(const MlpSpec& spec);

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  void initialize(std::mt19937_64& rng);

  const MlpSpec& spec() const { return spec_; }
  Eigen::VectorXd& params() { return params_; }
  const Eigen::VectorXd& params() const { return params_; }

  Eigen::Map<Eigen::MatrixXd> weight(int layer);
  Eigen::Map<const Eigen::MatrixXd> weight(int layer) const;
  Eigen::Map<Eigen::VectorXd> bias(int layer);
  Eigen::Map<const Eigen::VectorXd> bias(int layer) const;

  std::int64_t weight_offset(int layer) const { return offsets_[layer]; }
  std::int64_t bias_offset(int layer) const;

  /// Batched forward over the columns of `features` (input x batch).
  /// Throws ShapeMismatch on a wrong input height.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& features, MlpActivations* saved = nullptr) const;

  /// Accumulates d(loss)/d(params) into `grad` (same layout as params())
  /// given d(loss)/d(output) for the batch that produced `saved`.
  void backward(const MlpActivations& saved, const Eigen::MatrixXd& output_grad,
                Eigen::VectorXd& grad) const;

 private:
  MlpSpec spec_;
  Eigen::VectorXd params_;
  std::vector<std::int64_t> offsets_;
};

/// Single-sample forward on a tape: `params` are the flat parameters as Vars
/// (same layout as Mlp::params()), `features` may be doubles or Vars.
template <class F>
std::vector<Var> mlp_forward(const MlpSpec& spec, std::span<const Var> params,
                             std::span<const F> features);

/// Single-sample forward in double precision.
Eigen::VectorXd mlp_forward(const Mlp& mlp, const Eigen::VectorXd& features);

/// Maps a raw network output to a unit normal. Throws DegenerateVector if
/// the raw output norm is below 1e-9.
UnitVec3 normal_from_raw(const Vec3d& raw);
inline constexpr double kMinRawNormal = 1e-9;

/// softplus on every raw entry: entry 0 is the diffuse albedo, 1..k specular.
Material material_from_raw(std::span<const double> raw);

UnitVec3 normal_at(const Mlp& normal_net, const PositionalEncoder& enc, double x, double y);
Material material_at(const Mlp& material_net, const PositionalEncoder& enc, double x, double y);

/// Normalized [-1, 1] coordinates for the pixels of a mask: centred on the
/// mask's tight bounding box and scaled by half of its longest side.
class CoordinateFrame {
 public:
  CoordinateFrame() = default;
  /// Throws EmptyMask.
  explicit CoordinateFrame(const Mask& mask);

  double x(int col) const { return (col + 0.5 - center_col_) / half_extent_; }
  double y(int row) const { return (center_row_ - row - 0.5) / half_extent_; }

 private:
  double center_row_ = 0.0;
  double center_col_ = 0.0;
  double half_extent_ = 1.0;
};

/// Encoded features for a list of pixels, one column each.
Eigen::MatrixXd encode_pixels(const PositionalEncoder& enc, const CoordinateFrame& frame,
                              std::span<const Pixel> pixels);

struct LightInit {
  enum class Kind { ViewJitter, FromFile, GtNoise };
  Kind kind = Kind::ViewJitter;
  double sigma_deg = 0.0;
  std::string path;

  /// "view-jitter:<deg>", "file:<path>", "gt-noise:<deg>". Throws BadConfig.
  static LightInit parse(const std::string& text);
  std::string to_string() const;
};

/// Initial light table for `dataset` under the given strategy. Throws
/// MissingGroundTruth (gt-noise without truth) and FileFormat/CountMismatch
/// for unreadable light files.
LightTable light_init(const LightInit& strategy, const PhotometricDataset& dataset,
                      std::uint64_t seed);

}  // namespace psinvert
