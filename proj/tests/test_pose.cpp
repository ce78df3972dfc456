#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "cnnmap/errors.hpp"
#include "cnnmap/pose.hpp"
#include "test_util.hpp"

using namespace cnnmap;
using cnnmap::testing::central_difference;
using cnnmap::testing::relative_error;

namespace {

Quaternion random_unit_quat(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return Quaternion{n(rng), n(rng), n(rng), n(rng)}.canonical();
}

Vec3 random_vec(std::mt19937_64& rng, double scale = 2.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  return {u(rng), u(rng), u(rng)};
}

// Rotation about a unit axis by angle, built independently of the
// quaternion code (Rodrigues).
Mat3 rodrigues(const Vec3& axis, double angle) {
  const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
  const double x = axis[0], y = axis[1], z = axis[2];
  return {{{t * x * x + c, t * x * y - s * z, t * x * z + s * y},
           {t * x * y + s * z, t * y * y + c, t * y * z - s * x},
           {t * x * z - s * y, t * y * z + s * x, t * z * z + c}}};
}

double max_abs_diff(const Mat3& a, const Mat3& b) {
  double m = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) m = std::max(m, std::abs(a[i][j] - b[i][j]));
  return m;
}

}  // namespace

TEST_CASE("loss examples") {
  const LossConfig cfg{250.0};
  const Pose target{{0.5, -1.0, 2.0}, Quaternion{1, 0, 0, 0}};
  CHECK(pose_loss(to_pose_vector(target), target, cfg) == 0.0);

  PoseVector p = to_pose_vector(target);
  p[0] += 1.0;
  p[1] += 2.0;
  p[2] += 2.0;
  CHECK(pose_loss(p, target, cfg) == doctest::Approx(3.0).epsilon(1e-15));

  const Pose unnormalized{{0, 0, 0}, Quaternion{2, 0, 0, 0}};
  const PoseVector q1{0, 0, 0, 0, 1, 0, 0};
  CHECK(pose_loss(q1, unnormalized, cfg) == doctest::Approx(250.0 * std::sqrt(2.0)).epsilon(1e-12));
  CHECK(pose_loss(q1, unnormalized, cfg) == doctest::Approx(353.55339).epsilon(1e-7));
}

TEST_CASE("loss does not normalize the prediction") {
  const Pose target{{0, 0, 0}, Quaternion{1, 0, 0, 0}};
  const PoseVector doubled{0, 0, 0, 2, 0, 0, 0};
  CHECK(pose_loss(doubled, target, LossConfig{1.0}) == doctest::Approx(1.0));
}

TEST_CASE("zero target quaternion is rejected") {
  const Pose bad{{0, 0, 0}, Quaternion{0, 0, 0, 0}};
  const PoseVector p{};
  CHECK_THROWS_AS(pose_loss(p, bad, LossConfig{}), InvalidPoseError);
  CHECK_THROWS_AS(pose_loss_grad(p, bad, LossConfig{}), InvalidPoseError);
  CHECK_THROWS_AS(angular_error_deg(Quaternion{0, 0, 0, 0}, Quaternion{}), InvalidPoseError);
}

TEST_CASE("gradient examples") {
  const Pose target{{1, 1, 1}, Quaternion{1, 0, 0, 0}};
  PoseVector p = to_pose_vector(target);
  const PoseVector zero = pose_loss_grad(p, target, LossConfig{});
  for (double g : zero) CHECK(g == 0.0);

  p[0] += 3.0;
  const PoseVector g = pose_loss_grad(p, target, LossConfig{});
  CHECK(g[0] == doctest::Approx(1.0));
  CHECK(g[1] == 0.0);
  CHECK(g[2] == 0.0);
  for (int i = 3; i < 7; ++i) CHECK(g[i] == 0.0);
}

TEST_CASE("gradient matches central finite differences") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> beta_dist(0.5, 300.0);
  for (int trial = 0; trial < 50; ++trial) {
    CAPTURE(trial);
    std::normal_distribution<double> n(0.0, 1.0);
    const Pose target{random_vec(rng), Quaternion{n(rng), n(rng), n(rng), n(rng)}};
    PoseVector pred;
    for (auto& v : pred) v = n(rng);
    const LossConfig cfg{beta_dist(rng)};
    const PoseVector g = pose_loss_grad(pred, target, cfg);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double numeric = central_difference([&] { return pose_loss(pred, target, cfg); }, pred[i], 1e-6);
      CHECK(relative_error(g[i], numeric) < 1e-4);
    }
  }
}

TEST_CASE("loss properties: nonnegative, scale invariant in the target quaternion") {
  std::mt19937_64 rng(23);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> scale(0.01, 100.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Quaternion q{n(rng), n(rng), n(rng), n(rng)};
    const Vec3 x = random_vec(rng);
    PoseVector pred;
    for (auto& v : pred) v = n(rng);
    const double base = pose_loss(pred, Pose{x, q}, LossConfig{});
    CHECK(base >= 0.0);
    const double s = scale(rng);
    const Quaternion qs{q.w * s, q.x * s, q.y * s, q.z * s};
    CHECK(pose_loss(pred, Pose{x, qs}, LossConfig{}) == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("quat_from_matrix examples") {
  const Mat3 identity{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  CHECK(quat_from_matrix(identity) == Quaternion{1, 0, 0, 0});

  const Mat3 flip_z{{{-1, 0, 0}, {0, -1, 0}, {0, 0, 1}}};
  const Quaternion q = quat_from_matrix(flip_z);
  CHECK(q.w == doctest::Approx(0.0));
  CHECK(q.x == doctest::Approx(0.0));
  CHECK(q.y == doctest::Approx(0.0));
  CHECK(q.z == doctest::Approx(1.0));
  CHECK(max_abs_diff(matrix_from_quat(q), flip_z) < 1e-12);
}

TEST_CASE("quat_from_matrix recovers random rotations") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  for (int trial = 0; trial < 200; ++trial) {
    Vec3 axis = random_vec(rng, 1.0);
    const double len = std::hypot(axis[0], axis[1], axis[2]);
    for (auto& a : axis) a /= len;
    const Mat3 r = rodrigues(axis, angle(rng));
    const Quaternion q = quat_from_matrix(r);
    CHECK(q.w >= 0.0);
    CHECK(q.norm() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(max_abs_diff(matrix_from_quat(q), r) < 1e-6);
  }
}

TEST_CASE("matrix round trip on canonical unit quaternions") {
  std::mt19937_64 rng(37);
  for (int trial = 0; trial < 500; ++trial) {
    const Quaternion q = random_unit_quat(rng);
    const Quaternion back = quat_from_matrix(matrix_from_quat(q));
    CHECK(std::abs(back.w - q.w) < 1e-9);
    CHECK(std::abs(back.x - q.x) < 1e-9);
    CHECK(std::abs(back.y - q.y) < 1e-9);
    CHECK(std::abs(back.z - q.z) < 1e-9);
  }
}

TEST_CASE("non-rotations are rejected with the residual") {
  const Mat3 scaled{{{2, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  try {
    quat_from_matrix(scaled);
    FAIL("expected InvalidRotationError");
  } catch (const InvalidRotationError& e) {
    CHECK(e.residual() > 1e-4);
  }
  const Mat3 reflection{{{-1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  CHECK_THROWS_AS(quat_from_matrix(reflection), InvalidRotationError);
}

TEST_CASE("angular error examples and properties") {
  const Quaternion id{1, 0, 0, 0};
  const double h = std::numbers::pi / 4.0;
  CHECK(angular_error_deg(id, Quaternion{std::cos(h), std::sin(h), 0, 0}) == doctest::Approx(90.0));

  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 200; ++trial) {
    const Quaternion a = random_unit_quat(rng), b = random_unit_quat(rng);
    const Quaternion neg_a{-a.w, -a.x, -a.y, -a.z};
    CHECK(angular_error_deg(a, a) == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(angular_error_deg(a, neg_a) == doctest::Approx(0.0).epsilon(1e-6));
    const double e = angular_error_deg(a, b);
    CHECK(e >= 0.0);
    CHECK(e <= 180.0);
    CHECK(e == angular_error_deg(b, a));
    CHECK(e == doctest::Approx(angular_error_deg(neg_a, b)).epsilon(1e-12));
  }
}

TEST_CASE("position error") {
  CHECK(position_error({0, 0, 0}, {0, 0, 0}) == 0.0);
  CHECK(position_error({0, 0, 0}, {1, 2, 2}) == doctest::Approx(3.0));
  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 100; ++trial) {
    const Vec3 a = random_vec(rng), b = random_vec(rng);
    CHECK(position_error(a, b) == position_error(b, a));
  }
}

TEST_CASE("canonical poses have unit quaternions with nonnegative w") {
  const Pose p = Pose::canonical({1, 2, 3}, Quaternion{-2, 0, 0, 0});
  CHECK(p.orientation == Quaternion{1, 0, 0, 0});
  std::mt19937_64 rng(47);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Quaternion q = Quaternion{n(rng), n(rng), n(rng), n(rng)}.canonical();
    CHECK(q.w >= 0.0);
    CHECK(std::abs(q.norm() - 1.0) < 1e-6);
  }
}
