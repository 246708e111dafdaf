#include <doctest.h>

#include <random>
#include <vector>

#include "psinvert/metrics.hpp"

using namespace psinvert;
using doctest::Approx;

TEST_CASE("mean angular error") {
  Mask mask = Mask::Constant(1, 2, true);
  NormalMap a(1, 2, Vec3d{0, 0, 1});
  CHECK(mean_angular_error(a, a, mask) == 0.0);

  NormalMap b(1, 2, Vec3d{1, 0, 0});
  CHECK(mean_angular_error(a, b, mask) == Approx(90.0));

  NormalMap c = a;
  c(0, 1) = {0, 1, 0};
  CHECK(mean_angular_error(a, c, mask) == Approx(45.0));
  CHECK(mean_angular_error(c, a, mask) == mean_angular_error(a, c, mask));

  NormalMap flip(1, 2, Vec3d{0, 0, -1});
  CHECK(mean_angular_error(a, flip, mask) == Approx(180.0));

  Mask one = mask;
  one(0, 1) = false;
  CHECK(mean_angular_error(a, c, one) == 0.0);
  CHECK_THROWS_AS(mean_angular_error(a, NormalMap(2, 2), mask), Error);
  CHECK_THROWS_AS(mean_angular_error(a, c, Mask::Constant(1, 2, false)), Error);

  const Image map = angular_error_map(a, c, mask);
  CHECK(map(0, 0) == 0.0);
  CHECK(map(0, 1) == Approx(90.0));
}

TEST_CASE("light direction error") {
  LightTable a(2), b(2);
  a.set_direction(0, {0, 0, 1});
  a.set_direction(1, {0, 0, 1});
  b.set_direction(0, {0, 0, 1});
  b.set_direction(1, {1, 0, 1});
  CHECK(light_direction_error(a, b) == Approx(22.5));
  CHECK_THROWS_AS(light_direction_error(a, LightTable(3)), Error);
}

TEST_CASE("scale-invariant intensity error") {
  const std::vector<double> g{2, 2};
  CHECK(intensity_scale(std::vector<double>{1, 2}, g) == Approx(1.2));
  CHECK(scale_invariant_intensity_error(std::vector<double>{1, 2}, g) == Approx(0.3));
  CHECK(scale_invariant_intensity_error(g, g) == 0.0);
  CHECK(scale_invariant_intensity_error(std::vector<double>{4, 4}, g) == 0.0);
  CHECK_THROWS_AS(intensity_scale(std::vector<double>{0, 0}, g), Error);
  CHECK_THROWS_AS(intensity_scale(std::vector<double>{1}, g), Error);
}

TEST_CASE("scale-invariant error ignores a global scale") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.1, 3.0);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> e(8), g(8), e2(8);
    for (int i = 0; i < 8; ++i) {
      e[i] = u(rng);
      g[i] = u(rng);
    }
    const double k = u(rng) * 4;
    for (int i = 0; i < 8; ++i) e2[i] = k * e[i];
    CHECK(scale_invariant_intensity_error(e2, g) == Approx(scale_invariant_intensity_error(e, g)).epsilon(1e-12));
  }
}

TEST_CASE("psnr") {
  Image a = Image::Constant(4, 4, 0.5);
  CHECK(psnr(a, a) == kPsnrCap);
  Image b = a + 0.01;
  CHECK(psnr(b, a) == Approx(40.0));
  CHECK(psnr(b * 2.0, a * 2.0, 2.0) == Approx(40.0));
  Mask m = Mask::Constant(4, 4, false);
  m(0, 0) = true;
  Image c = a;
  c(3, 3) = 0.0;
  CHECK(psnr(c, a, 1.0, &m) == kPsnrCap);
  CHECK_THROWS_AS(psnr(a, Image::Zero(3, 4)), Error);
}
