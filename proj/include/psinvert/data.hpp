#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "psinvert/image.hpp"
#include "psinvert/lights.hpp"
#include "psinvert/shading.hpp"

namespace psinvert {

/// n grayscale images of one object under distant lights, seen orthographically.
struct PhotometricDataset {
  std::vector<std::string> names;  // order = light index everywhere downstream
  std::vector<Image> images;
  Mask mask;
  UnitVec3 view;
  std::optional<LightTable> gt_lights;
  std::optional<NormalMap> gt_normals;

  int count() const { return static_cast<int>(images.size()); }
  int rows() const { return static_cast<int>(mask.rows()); }
  int cols() const { return static_cast<int>(mask.cols()); }

  /// Throws ShapeMismatch / CountMismatch / FileFormat on inconsistent fields.
  void validate() const;
};

// ---------------------------------------------------------------------------
// PFM

/// Raw portable float map: rows stored top-to-bottom in memory, channels
/// interleaved (1 for "Pf", 3 for "PF").
struct PfmImage {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<float> data;

  float& at(int row, int col, int ch = 0) {
    return data[(static_cast<std::size_t>(row) * width + col) * channels + ch];
  }
  float at(int row, int col, int ch = 0) const {
    return data[(static_cast<std::size_t>(row) * width + col) * channels + ch];
  }
};

/// Header "Pf"/"PF", "<w> <h>", "-1.0", then little-endian float32 rows from
/// the bottom scanline up. Throws FileFormat on non-finite data.
void write_pfm(const PfmImage& image, const std::filesystem::path& path);
/// Accepts either byte order (sign of the scale line). Throws FileFormat on a
/// bad magic, bad dimensions or a short payload; MissingFile if absent.
PfmImage read_pfm(const std::filesystem::path& path);

PfmImage to_pfm(const Image& image);
PfmImage to_pfm(const NormalMap& normals);
/// Grayscale view; 3-channel input is reduced to luminance
/// 0.2126 R + 0.7152 G + 0.0722 B.
Image to_image(const PfmImage& pfm);
/// Throws FileFormat unless the map has three channels.
NormalMap to_normal_map(const PfmImage& pfm);

// ---------------------------------------------------------------------------
// Dataset directories

/// Reads filenames.txt, every listed <name>.pfm, mask.pfm and, when present,
/// light_directions.txt, light_intensities.txt and normal_gt.pfm.
PhotometricDataset load_dataset(const std::filesystem::path& dir);

/// Writes the same layout load_dataset reads.
void save_dataset(const PhotometricDataset& dataset, const std::filesystem::path& dir);

/// "lx ly lz" per line (a fourth column is read as intensity, default 1).
/// Throws CountMismatch if the line count differs from `expected` (when >= 0).
LightTable read_lights_file(const std::filesystem::path& path, int expected = -1);

// ---------------------------------------------------------------------------
// Synthetic scenes

struct SynthSceneSpec {
  enum class Shape { Sphere, Heightfield };
  enum class Layout { Uniform, TwoRegion, TexturedNoise };

  Shape shape = Shape::Sphere;
  int height = 64;
  int width = 64;
  double radius = 30.0;           // sphere radius in pixels
  double bump_amplitude = 4.0;    // heightfield amplitude in pixels
  double bump_frequency = 1.5;    // heightfield cycles across the image width

  Layout layout = Layout::TwoRegion;
  double diffuse_a = 0.6;
  double diffuse_b = 0.35;
  /// Specular albedo per basis; shorter lists are zero-padded to k.
  std::vector<double> specular_a = {0.6};
  std::vector<double> specular_b = {0.3, 0.0, 0.0, 0.0, 0.15};

  int k = 12;
  double r_top = 300.0;
  double r_bottom = 10.0;

  int light_count = 16;
  double cap_deg = 40.0;          // lights lie within this angle of the view axis
  double intensity_jitter = 0.2;  // intensities uniform in [1 - j, 1 + j]
  /// Explicit light directions; when non-empty they replace the spiral layout.
  std::vector<Vec3d> light_directions;

  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
};

SynthSceneSpec::Shape parse_shape(const std::string& text);
SynthSceneSpec::Layout parse_layout(const std::string& text);

struct SyntheticScene {
  PhotometricDataset dataset;   // with gt_lights and gt_normals
  Grid<Material> materials;
  SpecularBasisBank bank;
};

/// Renders a scene with attached shadows and every basis fully active.
/// Throws BadSpec on an invalid spec (including any light with z <= 0).
SyntheticScene synth_scene(const SynthSceneSpec& spec);

/// Rotates each direction about a uniformly random axis by an angle uniform in
/// [0, sigma_deg] and resets all intensities to 1.
LightTable perturb_lights(const LightTable& lights, double sigma_deg, std::uint64_t seed);

/// Direction rotated about `axis` (unit) by `angle` radians.
Vec3d rotate(const Vec3d& v, const Vec3d& axis, double angle);

/// Mask pixels 4-adjacent to a pixel outside the mask (or the image border).
std::vector<Pixel> mask_boundary(const Mask& mask);

/// Outward 2-D direction (x right, y up) at a boundary pixel, from the
/// negated gradient of a 3x3 box-smoothed mask. Zero if undefined.
Vec3d outward_direction(const Mask& mask, const Pixel& p);

}  // namespace psinvert
