#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "cnnmap/synth.hpp"
#include "test_util.hpp"

using namespace cnnmap;
using cnnmap::testing::TempDir;
namespace fs = std::filesystem;

namespace {

Vec3 optical_axis(const Pose& p) {
  const Mat3 r = matrix_from_quat(p.orientation);
  return {r[0][2], r[1][2], r[2][2]};
}

// Distance from `point` to the ray eye + s * axis.
double ray_distance(const Vec3& eye, const Vec3& axis, const Vec3& point) {
  const Vec3 d{point[0] - eye[0], point[1] - eye[1], point[2] - eye[2]};
  const double s = d[0] * axis[0] + d[1] * axis[1] + d[2] * axis[2];
  const Vec3 perp{d[0] - s * axis[0], d[1] - s * axis[1], d[2] - s * axis[2]};
  return std::hypot(perp[0], perp[1], perp[2]);
}

Scene single_point(const Vec3& pos, std::array<std::uint8_t, 3> color) {
  Scene s;
  s.points.push_back({pos, color});
  return s;
}

const Pose kIdentity{{0, 0, 0}, Quaternion{1, 0, 0, 0}};
const Intrinsics kK100{100.0, 100.0, 32.0, 32.0};

}  // namespace

TEST_CASE("scene generation") {
  const Scene a = generate_scene(5, 2000, 3.0), b = generate_scene(5, 2000, 3.0), c = generate_scene(6, 2000, 3.0);
  REQUIRE(a.points.size() == 2000);
  bool same = true, differs = false;
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    same &= a.points[i].position == b.points[i].position && a.points[i].color == b.points[i].color;
    differs |= a.points[i].position != c.points[i].position;
  }
  CHECK(same);
  CHECK(differs);
  CHECK(generate_scene(1, 1, 3.0).points.size() == 1);

  const double h = a.half_side();
  CHECK(2.0 * h * std::sqrt(3.0) == doctest::Approx(3.0));
  double mean = 0.0, sq = 0.0;
  for (const auto& p : a.points) {
    CHECK(std::hypot(p.position[0], p.position[1], p.position[2]) <= 1.5 + 1e-12);
    for (double v : p.position) CHECK(std::abs(v) <= h);
    mean += p.color[0];
    sq += double(p.color[0]) * p.color[0];
  }
  mean /= a.points.size();
  CHECK(std::sqrt(sq / a.points.size() - mean * mean) > 20.0);
}

TEST_CASE("circle trajectory") {
  TrajectorySpec spec;
  spec.radius = 2.0;
  spec.frame_count = 12;
  const auto poses = generate_trajectory(spec);
  REQUIRE(poses.size() == 12);
  CHECK(poses[0].position[0] == doctest::Approx(2.0));
  CHECK(poses[0].position[1] == doctest::Approx(0.0));
  CHECK(poses[0].position[2] == doctest::Approx(0.0));
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const double t = 2.0 * std::numbers::pi * i / 12.0;
    CHECK(poses[i].position[0] == doctest::Approx(2.0 * std::cos(t)));
    CHECK(poses[i].position[1] == doctest::Approx(2.0 * std::sin(t)));
    CHECK(poses[i].orientation.w >= 0.0);
  }
}

TEST_CASE("every trajectory kind looks at its centre") {
  for (auto kind : {TrajectoryKind::circle, TrajectoryKind::arc, TrajectoryKind::random_walk}) {
    TrajectorySpec spec;
    spec.kind = kind;
    spec.center = {0.3, -0.2, 0.5};
    spec.frame_count = 40;
    spec.seed = 9;
    const auto poses = generate_trajectory(spec);
    CHECK(poses.size() == 40);
    for (const auto& p : poses) CHECK(ray_distance(p.position, optical_axis(p), spec.center) < 1e-9);
  }
  TrajectorySpec one;
  one.frame_count = 1;
  CHECK(generate_trajectory(one).size() == 1);
}

TEST_CASE("look_at camera convention") {
  const Pose p = look_at({3, 0, 0}, {0, 0, 0});
  const Mat3 r = matrix_from_quat(p.orientation);
  // +Z forward towards -X world, +Y down towards -Z world.
  CHECK(r[0][2] == doctest::Approx(-1.0));
  CHECK(r[2][1] == doctest::Approx(-1.0));
}

TEST_CASE("ring layout staggers the trajectories") {
  const auto specs = ring_layout(RingLayout{});
  REQUIRE(specs.size() == 6);
  for (std::size_t i = 1; i < specs.size(); ++i) {
    CHECK(specs[i].radius != specs[0].radius);
    CHECK(specs[i].frame_count == 60);
  }
}

TEST_CASE("render examples") {
  const auto lit = render(single_point({0, 0, 2}, {200, 100, 50}), kIdentity, kK100, 64);
  CHECK(lit.depth.at(32, 32) == 2.0f);
  CHECK(lit.rgb.at(32, 32, 0) == 200);
  CHECK(lit.rgb.at(33, 33, 2) == 50);
  CHECK(lit.depth.at(31, 31) == 0.0f);
  CHECK(lit.rgb.at(0, 0, 0) == 0);

  const auto behind = render(single_point({0, 0, -2}, {255, 255, 255}), kIdentity, kK100, 64);
  for (float d : behind.depth.meters) CHECK(d == 0.0f);
  for (auto v : behind.rgb.pixels) CHECK(v == 0);

  Scene two;
  two.points.push_back({{0, 0, 2}, {10, 10, 10}});
  two.points.push_back({{0, 0, 1}, {250, 250, 250}});
  const auto z = render(two, kIdentity, kK100, 64);
  CHECK(z.depth.at(32, 32) == 1.0f);
  CHECK(z.rgb.at(32, 32, 1) == 250);
}

TEST_CASE("render then backproject recovers lit pixels") {
  const Scene scene = generate_scene(3, 5000, 3.4641);
  const Intrinsics k = Intrinsics::synthetic();
  const Pose pose = look_at({3, 0.5, 0.2}, {0, 0, 0});
  const auto r = render(scene, pose, k, 64);
  const PointMap pts = backproject(r.depth, k);
  std::size_t lit = 0;
  for (std::size_t v = 0; v < 64; ++v) {
    for (std::size_t u = 0; u < 64; ++u) {
      if (r.depth.at(u, v) <= 0.0f) continue;
      ++lit;
      const double* q = pts.xyz.data() + (v * 64 + u) * 3;
      CHECK(std::abs(k.fx * q[0] / q[2] + k.cx - double(u)) < 1e-6);
      CHECK(std::abs(k.fy * q[1] / q[2] + k.cy - double(v)) < 1e-6);
    }
  }
  CHECK(lit > 1000);
}

TEST_CASE("write_dataset round trip through the 7-Scenes loader") {
  TempDir dir;
  const Scene scene = generate_scene(4, 3000, 3.4641);
  std::vector<std::vector<Pose>> trajs;
  for (const auto& spec : ring_layout(RingLayout{3, 5, 3.0, 0.5, 0.5})) trajs.push_back(generate_trajectory(spec));
  write_dataset(scene, trajs, Intrinsics::synthetic(), 64, dir.path());
  std::size_t folders = 0;
  for (const auto& e : fs::directory_iterator(dir.path())) folders += e.is_directory();
  CHECK(folders == 3);
  CHECK(fs::is_directory(dir / "seq-01"));
  CHECK(fs::is_directory(dir / "seq-03"));

  for (std::size_t t = 0; t < 3; ++t) {
    char name[16];
    std::snprintf(name, sizeof name, "seq-%02zu", t + 1);
    const Sequence seq = load_7scenes_sequence(dir / name);
    CHECK(seq.intrinsics.fx == 70.0);
    REQUIRE(seq.frames.size() == 5);
    const Sequence mem = render_sequence(scene, trajs[t], Intrinsics::synthetic(), 64, name);
    for (std::size_t i = 0; i < 5; ++i) {
      const Pose& gt = trajs[t][i];
      const Frame f = seq.frames[i].decoded();
      CHECK(position_error(f.pose.position, gt.position) < 1e-6);
      CHECK(angular_error_deg(f.pose.orientation, gt.orientation) < 1e-4);
      CHECK(f.rgb->pixels == mem.frames[i].rgb->pixels);
      for (std::size_t p = 0; p < f.depth->meters.size(); ++p) {
        CHECK(std::abs(f.depth->meters[p] - mem.frames[i].depth->meters[p]) <= 0.0005f + 1e-6f);
      }
    }
  }
}

TEST_CASE("depth is stored in millimetres") {
  TempDir dir;
  write_dataset(single_point({0, 0, 1.234}, {9, 9, 9}), {{kIdentity}}, kK100, 64, dir.path());
  const Image16 raw = read_png16(dir / "seq-01/frame-000000.depth.png");
  CHECK(raw.pixels[32 * 64 + 32] == 1234);
  CHECK(raw.pixels[0] == 65535);
}
