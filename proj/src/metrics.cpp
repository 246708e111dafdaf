#include "psinvert/metrics.hpp"

#include <cmath>

namespace psinvert {

Image angular_error_map(const NormalMap& est, const NormalMap& gt, const Mask& mask) {
  require_same_shape(est, gt, "normal fields differ in size");
  require_same_shape(est, mask, "normal field and mask differ in size");
  Image err = Image::Zero(mask.rows(), mask.cols());
  for (int r = 0; r < mask.rows(); ++r)
    for (int c = 0; c < mask.cols(); ++c)
      if (mask(r, c)) err(r, c) = angle_deg(est(r, c), gt(r, c));
  return err;
}

double mean_angular_error(const NormalMap& est, const NormalMap& gt, const Mask& mask) {
  const Image err = angular_error_map(est, gt, mask);
  const auto count = mask.count();
  if (count == 0) throw Error(ErrorKind::EmptyMask, "angular error over an empty mask");
  return err.sum() / static_cast<double>(count);
}

double light_direction_error(const LightTable& est, const LightTable& gt) {
  if (est.size() != gt.size() || est.size() == 0) {
    throw Error(ErrorKind::ShapeMismatch, "light tables differ in size");
  }
  double sum = 0.0;
  for (int j = 0; j < est.size(); ++j) sum += angle_deg(est.direction(j), gt.direction(j));
  return sum / est.size();
}

double intensity_scale(std::span<const double> est, std::span<const double> gt) {
  if (est.size() != gt.size() || est.empty()) {
    throw Error(ErrorKind::ShapeMismatch, "intensity lists differ in size or are empty");
  }
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    num += est[i] * gt[i];
    den += est[i] * est[i];
  }
  if (!(den > 0.0)) throw Error(ErrorKind::DegenerateEstimate, "all intensity estimates are zero");
  return num / den;
}

double scale_invariant_intensity_error(std::span<const double> est, std::span<const double> gt) {
  const double s = intensity_scale(est, gt);
  double sum = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    if (!(gt[i] > 0.0)) throw Error(ErrorKind::OutOfRange, "ground-truth intensities must be positive");
    sum += std::abs(s * est[i] - gt[i]) / gt[i];
  }
  return sum / static_cast<double>(est.size());
}

double psnr(const Image& img, const Image& ref, double peak, const Mask* mask) {
  require_same_shape(img, ref, "PSNR images differ in size");
  double sse = 0.0;
  std::size_t count = 0;
  if (mask) {
    require_same_shape(img, *mask, "PSNR mask differs in size");
    for (int r = 0; r < img.rows(); ++r)
      for (int c = 0; c < img.cols(); ++c)
        if ((*mask)(r, c)) {
          const double d = img(r, c) - ref(r, c);
          sse += d * d;
          ++count;
        }
  } else {
    sse = (img - ref).square().sum();
    count = static_cast<std::size_t>(img.size());
  }
  if (count == 0) throw Error(ErrorKind::EmptyMask, "PSNR over no pixels");
  const double mse = sse / static_cast<double>(count);
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

}  // namespace psinvert
