#pragma once

#include <optional>
#include <span>

#include "psinvert/image.hpp"
#include "psinvert/lights.hpp"

namespace psinvert {

/// Mean over `mask` of the angle between est and gt, in degrees.
/// Throws ShapeMismatch; EmptyMask if the mask selects nothing.
double mean_angular_error(const NormalMap& est, const NormalMap& gt, const Mask& mask);

/// Per-pixel angular error in degrees (0 outside the mask).
Image angular_error_map(const NormalMap& est, const NormalMap& gt, const Mask& mask);

/// Light-direction MAE, lights paired by index.
double light_direction_error(const LightTable& est, const LightTable& gt);

/// Optimal global scale for est against gt in least squares:
/// sum(e * g) / sum(e^2). Throws DegenerateEstimate when sum(e^2) == 0.
double intensity_scale(std::span<const double> est, std::span<const double> gt);

/// (1/n) sum |s e_i - g_i| / g_i with s = intensity_scale(e, g).
double scale_invariant_intensity_error(std::span<const double> est, std::span<const double> gt);

inline constexpr double kPsnrCap = 99.0;

/// 10 log10(peak^2 / MSE) over the masked pixels (all pixels when the mask is
/// empty-sized), capped at 99 dB.
double psnr(const Image& img, const Image& ref, double peak = 1.0, const Mask* mask = nullptr);

struct EvalReport {
  std::optional<double> normal_mae_deg;
  std::optional<double> light_dir_mae_deg;
  std::optional<double> intensity_si_error;
  std::optional<double> psnr_db;
  Image angular_error;
};

}  // namespace psinvert
