#include <doctest.h>

#include <cmath>
#include <random>

#include "psinvert/data.hpp"
#include "psinvert/field.hpp"

using namespace psinvert;
using doctest::Approx;

TEST_CASE("positional encoding") {
  const PositionalEncoder enc;
  CHECK(enc.width() == 42);
  const Eigen::VectorXd zero = enc.encode(0.0, 0.0);
  CHECK(zero(0) == 0.0);
  CHECK(zero(1) == 0.0);
  // per axis: sin/cos pairs; at t = 0 every sine is 0 and every cosine is 1
  for (int i = 2; i < 42; ++i) {
    const bool is_sin = ((i - 2) % 2) == 0;
    CHECK(zero(i) == (is_sin ? 0.0 : 1.0));
  }

  const PositionalEncoder one_level(1, false);
  CHECK(one_level.width() == 4);
  const Eigen::VectorXd f = one_level.encode(1.0, 0.0);
  CHECK(f(0) == Approx(0.0).epsilon(1e-15));  // sin(pi)
  CHECK(f(1) == Approx(-1.0));                // cos(pi)

  const Eigen::VectorXd g = PositionalEncoder(4, false).encode(1.0, 0.0);
  for (int j = 1; j < 4; ++j) CHECK(g(2 * j + 1) == Approx(1.0));  // cos(2^j pi)

  CHECK_THROWS_AS(enc.encode(1.1, 0.0), Error);
  CHECK_NOTHROW(enc.encode(1.0 + 1e-10, -1.0));
  CHECK_THROWS_AS(PositionalEncoder(0), Error);
}

TEST_CASE("positional encoding separates distinct inputs") {
  const PositionalEncoder enc;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const double x1 = u(rng), y1 = u(rng), x2 = u(rng), y2 = u(rng);
    CHECK((enc.encode(x1, y1) - enc.encode(x2, y2)).norm() > 0.0);
  }
}

TEST_CASE("mlp forward") {
  Mlp zero({4, 8, 3, 2});
  zero.params().setZero();
  zero.bias(2) << 0.25, -1.5;
  const Eigen::VectorXd out = mlp_forward(zero, Eigen::VectorXd::Random(4));
  CHECK(out(0) == 0.25);
  CHECK(out(1) == -1.5);

  Mlp linear({3, 5, 1, 2});
  std::mt19937_64 rng(2);
  linear.initialize(rng);
  const Eigen::VectorXd x = Eigen::Vector3d(0.3, -0.2, 0.9);
  const Eigen::VectorXd expect = linear.weight(0) * x + linear.bias(0);
  CHECK((mlp_forward(linear, x) - expect).norm() < 1e-15);

  // a rectifier layer zeroes negative pre-activations
  Mlp two({1, 2, 2, 1});
  two.params().setZero();
  two.weight(0) << 1.0, -1.0;
  two.weight(1) << 1.0, 1.0;
  Eigen::VectorXd in(1);
  in << 2.0;
  CHECK(mlp_forward(two, in)(0) == 2.0);

  CHECK_THROWS_AS(mlp_forward(two, Eigen::VectorXd::Zero(2)), Error);
}

TEST_CASE("mlp parameter count and layout") {
  const MlpSpec spec{42, 256, 8, 3};
  CHECK(spec.parameter_count() == 42 * 256 + 256 + 6 * (256 * 256 + 256) + 256 * 3 + 3);
  Mlp m(spec);
  CHECK(m.params().size() == spec.parameter_count());
  CHECK(m.bias_offset(0) == 42 * 256);
  CHECK(m.weight_offset(1) == 42 * 256 + 256);
}

TEST_CASE("batched backward matches the tape") {
  Mlp m({6, 7, 3, 2});
  std::mt19937_64 rng(3);
  m.initialize(rng);
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(6, 5);
  Eigen::MatrixXd w = Eigen::MatrixXd::Random(2, 5);

  MlpActivations saved;
  const Eigen::MatrixXd out = m.forward(x, &saved);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(m.params().size());
  m.backward(saved, w, grad);

  Tape tape;
  std::vector<Var> params;
  for (Eigen::Index i = 0; i < m.params().size(); ++i) params.push_back(tape.variable(m.params()(i)));
  Var total = tape.constant(0.0);
  for (int b = 0; b < 5; ++b) {
    std::vector<double> feat(x.col(b).data(), x.col(b).data() + 6);
    const std::vector<Var> y = mlp_forward<double>(m.spec(), params, feat);
    CHECK(y[0].value() == Approx(out(0, b)).epsilon(1e-13));
    total = total + y[0] * w(0, b) + y[1] * w(1, b);
  }
  const Gradients g = backward(tape, total);
  for (Eigen::Index i = 0; i < m.params().size(); ++i) CHECK(grad(i) == Approx(g[params[i]]).epsilon(1e-12));
}

TEST_CASE("normal and material readouts") {
  std::mt19937_64 rng(4);
  Mlp normal_net({42, 16, 3, 3});
  normal_net.initialize(rng);
  Mlp material_net({42, 16, 3, 13});
  material_net.initialize(rng);
  const PositionalEncoder enc;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const double x = u(rng), y = u(rng);
    const UnitVec3 n = normal_at(normal_net, enc, x, y);
    CHECK(norm(n.vec()) == Approx(1.0).epsilon(1e-12));
    CHECK(normal_at(normal_net, enc, x, y).vec().x == n.x());
    const Material m = material_at(material_net, enc, x, y);
    CHECK(m.specular.size() == 12);
    CHECK(m.diffuse >= 0.0);
    for (double s : m.specular) CHECK(s >= 0.0);
  }
  const std::vector<double> raw{0.0, -800.0};
  const Material m = material_from_raw(raw);
  CHECK(m.diffuse == Approx(std::log(2.0)));
  CHECK(m.specular[0] >= 0.0);
  CHECK(m.specular[0] < 1e-300);
  CHECK_THROWS_AS(normal_from_raw({1e-10, 0, 0}), Error);
}

TEST_CASE("coordinate frame") {
  Mask mask = Mask::Constant(10, 20, false);
  mask.block(2, 4, 4, 8) = true;  // rows 2..5, cols 4..11
  const CoordinateFrame f(mask);
  CHECK(f.x(4) == Approx(-1.0 + 1.0 / 8));
  CHECK(f.x(11) == Approx(1.0 - 1.0 / 8));
  CHECK(f.y(2) > 0.0);
  CHECK(f.y(2) == Approx(-f.y(5)));
  CHECK(std::abs(f.y(2)) < 1.0);
  CHECK_THROWS_AS(CoordinateFrame(Mask::Constant(3, 3, false)), Error);
}

TEST_CASE("light table readouts") {
  LightTable t(3);
  t.params() << 0, 0, 5, 0.3, 3, 0, 4, -1.0, 0, -2, 2, 0.0;
  CHECK(t.direction(0).z() == Approx(1.0));
  CHECK(t.direction(1).x() == Approx(0.6));
  CHECK(t.intensity(0) == Approx(std::exp(0.3)));
  CHECK(t.intensity(1) > 0.0);
  t.params().segment(0, 3).setConstant(1e-9);
  CHECK(t.guard() == 1);
  CHECK(norm(t.raw_direction(0)) == Approx(1.0));
}

TEST_CASE("light initialisation strategies") {
  SynthSceneSpec spec;
  spec.height = spec.width = 24;
  spec.radius = 10;
  spec.light_count = 8;
  const SyntheticScene scene = synth_scene(spec);

  const LightTable view = light_init(LightInit::parse("view-jitter:0"), scene.dataset, 0);
  for (int j = 0; j < view.size(); ++j) {
    CHECK(view.direction(j).z() == Approx(1.0));
    CHECK(view.intensity(j) == 1.0);
  }
  const LightTable jitter = light_init(LightInit::parse("view-jitter:5"), scene.dataset, 0);
  for (int j = 0; j < jitter.size(); ++j) CHECK(angle_deg(jitter.direction(j), Vec3d{0, 0, 1}) <= 5.0 + 1e-9);

  const LightTable noisy = light_init(LightInit::parse("gt-noise:70"), scene.dataset, 1);
  for (int j = 0; j < noisy.size(); ++j) {
    CHECK(angle_deg(noisy.direction(j), scene.dataset.gt_lights->direction(j)) <= 70.0 + 1e-9);
    CHECK(noisy.intensity(j) == 1.0);
  }

  PhotometricDataset bare = scene.dataset;
  bare.gt_lights.reset();
  CHECK_THROWS_AS(light_init(LightInit::parse("gt-noise:30"), bare, 0), Error);
  CHECK_THROWS_AS(LightInit::parse("sideways:3"), Error);
  CHECK(LightInit::parse("gt-noise:30").to_string() == "gt-noise:30");
}
