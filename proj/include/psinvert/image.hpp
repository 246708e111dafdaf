#pragma once

#include <Eigen/Core>
#include <vector>

#include "psinvert/error.hpp"
#include "psinvert/vec3.hpp"

namespace psinvert {

/// Single-channel float image, rows = height, row 0 is the top scanline.
using Image = Eigen::ArrayXXd;
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Dense row-major 2-D array of arbitrary cells (normals, materials).
template <class T>
class Grid {
 public:
  Grid() = default;
  Grid(int rows, int cols, const T& fill = T{})
      : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, fill) {}

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  T& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  const T& operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<T> data_;
};

using NormalMap = Grid<Vec3d>;

template <class A, class B>
bool same_shape(const A& a, const B& b) {
  return a.rows() == b.rows() && a.cols() == b.cols();
}

template <class A, class B>
void require_same_shape(const A& a, const B& b, const char* what) {
  if (!same_shape(a, b)) throw Error(ErrorKind::ShapeMismatch, what);
}

/// Pixel position of a mask element.
struct Pixel {
  int row = 0;
  int col = 0;
};

inline std::vector<Pixel> masked_pixels(const Mask& mask) {
  std::vector<Pixel> out;
  for (int r = 0; r < mask.rows(); ++r)
    for (int c = 0; c < mask.cols(); ++c)
      if (mask(r, c)) out.push_back({r, c});
  return out;
}

}  // namespace psinvert
