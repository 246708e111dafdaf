#include <doctest.h>

#include <cmath>
#include <random>

#include "psinvert/autodiff.hpp"
#include "psinvert/vec3.hpp"

using namespace psinvert;

namespace {

Vec3d random_vec(std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  return {u(rng), u(rng), u(rng)};
}

}  // namespace

TEST_CASE("normalize") {
  CHECK(normalize({0, 0, 2}).vec().z == doctest::Approx(1.0));
  const UnitVec3 id = normalize({0, 0, 1});
  CHECK(id.x() == 0.0);
  CHECK(id.z() == 1.0);
  const UnitVec3 n = normalize({3, 0, 4});
  CHECK(n.x() == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(n.z() == doctest::Approx(0.8).epsilon(1e-15));

  CHECK_THROWS_AS(normalize({0, 0, 0}), Error);
  CHECK_THROWS_AS(normalize({1e-13, 0, 0}), Error);
  try {
    normalize({0, 0, 0});
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DegenerateVector);
  }
}

TEST_CASE("normalize is idempotent") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 200; ++i) {
    const Vec3d v = random_vec(rng, -10, 10);
    const Vec3d a = normalize(v);
    const Vec3d b = normalize(a);
    CHECK(norm(a - b) < 1e-12);
    CHECK(std::abs(norm(a) - 1.0) < 1e-12);
  }
}

TEST_CASE("UnitVec3 rejects non-unit input") {
  CHECK_NOTHROW(UnitVec3::from_unit({0, 0, 1}));
  CHECK_THROWS_AS(UnitVec3::from_unit({0, 0, 1.1}), Error);
}

TEST_CASE("angle_deg clamps") {
  CHECK(angle_deg({0, 0, 1}, {0, 0, -1}) == doctest::Approx(180.0));
  CHECK(angle_deg({1, 0, 0}, {0, 1, 0}) == doctest::Approx(90.0));
  const Vec3d a = normalize({1, 2, 3});
  CHECK(std::isfinite(angle_deg(a, a)));
}

TEST_CASE("backward: product and exp") {
  Tape tape;
  Var x = tape.variable(2.0), y = tape.variable(3.0);
  const Gradients g = backward(tape, x * y);
  CHECK(g[x] == 3.0);
  CHECK(g[y] == 2.0);

  Tape t2;
  Var z = t2.variable(0.0);
  CHECK(backward(t2, exp(z))[z] == doctest::Approx(1.0));
}

TEST_CASE("relu and abs have zero subgradient at the kink") {
  Tape tape;
  Var x = tape.variable(0.0);
  CHECK(backward(tape, relu(x))[x] == 0.0);
  Tape t2;
  Var y = t2.variable(0.0);
  CHECK(backward(t2, abs(y))[y] == 0.0);
}

TEST_CASE("output is its own unit seed") {
  Tape tape;
  Var x = tape.variable(1.5);
  Var f = sin(x) * x;
  CHECK(backward(tape, f)[f] == 1.0);
}

TEST_CASE("fan-out gradients add") {
  Tape tape;
  Var x = tape.variable(1.3);
  Var f = x * x + x * 2.0 + exp(x);
  CHECK(backward(tape, f)[x] == doctest::Approx(2 * 1.3 + 2.0 + std::exp(1.3)).epsilon(1e-14));
}

TEST_CASE("foreign variables are rejected") {
  Tape a, b;
  Var x = a.variable(1.0);
  Var y = b.variable(2.0);
  CHECK_THROWS_AS(backward(b, x), Error);
  try {
    backward(b, x * 1.0);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ForeignVar);
  }
  CHECK_THROWS_AS(x + y, Error);
}

TEST_CASE("grad_check on x^2") {
  const std::vector<double> x{3.0};
  const GradCheckResult r =
      grad_check([](Tape&, std::span<const Var> v) { return v[0] * v[0]; }, x, 1e-4);
  CHECK(r.max_relative_error < 1e-6);
  CHECK_FALSE(r.near_kink);
}

TEST_CASE("grad_check flags a kink inside the stencil") {
  const std::vector<double> x{0.0};
  const GradCheckResult r = grad_check([](Tape&, std::span<const Var> v) { return relu(v[0]); }, x, 1e-4);
  CHECK(r.near_kink);
}

TEST_CASE("grad_check rejects bad steps and non-finite values") {
  const std::vector<double> x{1.0};
  auto sq = [](Tape&, std::span<const Var> v) { return v[0] * v[0]; };
  CHECK_THROWS_AS(grad_check(sq, x, 1e-7), Error);
  CHECK_THROWS_AS(grad_check(sq, x, 1e-2), Error);
  const std::vector<double> z{0.0};
  try {
    grad_check([](Tape&, std::span<const Var> v) { return log(v[0]); }, z, 1e-4);
    FAIL("expected NonFinite");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NonFinite);
  }
}

TEST_CASE("every primitive matches central differences") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.2, 2.0);
  std::uniform_real_distribution<double> s(-2.0, 2.0);
  using Fn = std::function<Var(Tape&, std::span<const Var>)>;
  const std::vector<std::pair<const char*, Fn>> fns = {
      {"add", [](Tape&, std::span<const Var> v) { return v[0] + v[1]; }},
      {"sub", [](Tape&, std::span<const Var> v) { return v[0] - v[1] * 2.0; }},
      {"mul", [](Tape&, std::span<const Var> v) { return v[0] * v[1]; }},
      {"div", [](Tape&, std::span<const Var> v) { return v[0] / v[1]; }},
      {"exp", [](Tape&, std::span<const Var> v) { return exp(v[0] - v[1]); }},
      {"log", [](Tape&, std::span<const Var> v) { return log(v[0] * v[1]); }},
      {"sqrt", [](Tape&, std::span<const Var> v) { return sqrt(v[0] + v[1]); }},
      {"relu", [](Tape&, std::span<const Var> v) { return relu(v[0] - v[1]); }},
      {"softplus", [](Tape&, std::span<const Var> v) { return softplus(v[0] - v[1]); }},
      {"dot", [](Tape&, std::span<const Var> v) {
         return dot(Vec3<Var>{v[0], v[1], v[2]}, Vec3<Var>{v[3], v[4], v[5]});
       }},
      {"normalize", [](Tape&, std::span<const Var> v) {
         const Vec3<Var> n = normalized(Vec3<Var>{v[0], v[1], v[2]});
         return n.x * 0.3 + n.y * 0.5 - n.z * 0.7;
       }},
      {"affine+relu", [](Tape&, std::span<const Var> v) {
         Var h = relu(v[0] * 0.7 - v[1] * 0.4 + v[2] * 0.2 + 0.1);
         return h * v[3] + v[4];
       }},
  };
  for (const auto& [name, f] : fns) {
    CAPTURE(name);
    int checked = 0;
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> x(6);
      for (int i = 0; i < 6; ++i) x[i] = (i < 2 ? u(rng) : s(rng));
      const GradCheckResult r = grad_check(f, x, 1e-5);
      if (r.near_kink) continue;
      worst = std::max(worst, r.max_relative_error);
      ++checked;
    }
    CHECK(checked > 25);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("tape clear keeps capacity but resets nodes") {
  Tape tape;
  for (int i = 0; i < 10; ++i) tape.variable(i);
  CHECK(tape.size() == 10);
  tape.clear();
  CHECK(tape.size() == 0);
}
