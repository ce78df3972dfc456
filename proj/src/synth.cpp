#include "cnnmap/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>

#include "cnnmap/errors.hpp"

namespace cnnmap {

namespace fs = std::filesystem;

namespace {

Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
Vec3 normalize(const Vec3& v) {
  const double n = std::hypot(v[0], v[1], v[2]);
  return {v[0] / n, v[1] / n, v[2] / n};
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace

double Scene::half_side() const { return extent / (2.0 * std::sqrt(3.0)); }

Scene generate_scene(std::uint64_t seed, std::size_t num_points, double extent) {
  Scene scene;
  scene.seed = seed;
  scene.extent = extent;
  std::mt19937_64 rng(seed);
  const double h = scene.half_side();

  struct Wave {
    Vec3 k;
    double phase;
  };
  std::array<std::array<Wave, 2>, 3> waves{};
  for (auto& channel : waves) {
    for (auto& w : channel) {
      const double theta = 2.0 * std::numbers::pi * uniform01(rng);
      const double z = 2.0 * uniform01(rng) - 1.0;
      const double r = std::sqrt(1.0 - z * z);
      const double freq = (0.6 + 0.8 * uniform01(rng)) * std::numbers::pi / h;
      w.k = {freq * r * std::cos(theta), freq * r * std::sin(theta), freq * z};
      w.phase = 2.0 * std::numbers::pi * uniform01(rng);
    }
  }

  scene.points.reserve(num_points);
  for (std::size_t i = 0; i < num_points; ++i) {
    ScenePoint p;
    // Uniform over the six faces of the cube.
    const auto face = static_cast<std::size_t>(rng() % 6);
    const std::size_t axis = face / 2;
    for (std::size_t c = 0; c < 3; ++c) {
      p.position[c] = c == axis ? (face % 2 ? h : -h) : (2.0 * uniform01(rng) - 1.0) * h;
    }
    for (std::size_t c = 0; c < 3; ++c) {
      double v = 127.5;
      for (const auto& w : waves[c]) {
        v += 55.0 * std::sin(w.k[0] * p.position[0] + w.k[1] * p.position[1] + w.k[2] * p.position[2] + w.phase);
      }
      v += 20.0 * (2.0 * uniform01(rng) - 1.0);
      p.color[c] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
    scene.points.push_back(p);
  }
  return scene;
}

Pose look_at(const Vec3& eye, const Vec3& target) {
  const Vec3 forward = normalize(sub(target, eye));
  Vec3 up{0.0, 0.0, 1.0};
  if (std::abs(forward[2]) > 0.999) up = {0.0, 1.0, 0.0};
  const Vec3 right = normalize(cross(forward, up));
  const Vec3 down = cross(forward, right);
  const Mat3 r{{{right[0], down[0], forward[0]}, {right[1], down[1], forward[1]}, {right[2], down[2], forward[2]}}};
  return Pose::canonical(eye, quat_from_matrix(r));
}

std::vector<Pose> generate_trajectory(const TrajectorySpec& spec) {
  std::vector<Pose> poses;
  poses.reserve(spec.frame_count);
  const std::size_t n = spec.frame_count;
  if (spec.kind == TrajectoryKind::random_walk) {
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    double angle = spec.start_angle, radius = spec.radius, height = 0.0;
    const double step = spec.sweep / static_cast<double>(std::max<std::size_t>(n, 1));
    for (std::size_t i = 0; i < n; ++i) {
      const Vec3 eye{spec.center[0] + radius * std::cos(angle), spec.center[1] + radius * std::sin(angle),
                     spec.center[2] + height};
      poses.push_back(look_at(eye, spec.center));
      angle += step * (1.0 + 0.5 * noise(rng));
      radius = std::max(0.5 * spec.radius, radius + 0.02 * spec.radius * noise(rng));
      height += 0.02 * spec.radius * noise(rng);
    }
    return poses;
  }
  const double denom = spec.kind == TrajectoryKind::arc ? static_cast<double>(n > 1 ? n - 1 : 1)
                                                        : static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = spec.start_angle + spec.sweep * static_cast<double>(i) / denom;
    const Vec3 eye{spec.center[0] + spec.radius * std::cos(t), spec.center[1] + spec.radius * std::sin(t),
                   spec.center[2]};
    poses.push_back(look_at(eye, spec.center));
  }
  return poses;
}

std::vector<TrajectorySpec> ring_layout(const RingLayout& layout) {
  std::vector<TrajectorySpec> specs;
  const std::size_t k = layout.trajectories;
  for (std::size_t i = 0; i < k; ++i) {
    const double u = k > 1 ? static_cast<double>(i) / static_cast<double>(k - 1) - 0.5 : 0.0;
    // Heights follow a different ordering than radii so no two rings are
    // simply nested copies of each other.
    const double v = k > 1 ? static_cast<double>((i * 2) % k) / static_cast<double>(k - 1) - 0.5 : 0.0;
    TrajectorySpec s;
    s.kind = TrajectoryKind::circle;
    s.radius = layout.radius + layout.radius_spread * u;
    s.center = {0.0, 0.0, layout.height_spread * v};
    s.frame_count = layout.frames;
    s.start_angle = 2.0 * std::numbers::pi * static_cast<double>(i) /
                    static_cast<double>(k * std::max<std::size_t>(layout.frames, 1));
    specs.push_back(s);
  }
  return specs;
}

RenderedFrame render(const Scene& scene, const Pose& pose, const Intrinsics& k, std::size_t size) {
  RenderedFrame out;
  out.rgb = Image8(size, size, 3, 0);
  out.depth.width = size;
  out.depth.height = size;
  out.depth.meters.assign(size * size, 0.0f);
  std::vector<double> zbuf(size * size, std::numeric_limits<double>::infinity());

  const Mat3 r = matrix_from_quat(pose.orientation);
  for (const auto& p : scene.points) {
    const Vec3 d = sub(p.position, pose.position);
    // camera = R^T (world - t)
    const double x = r[0][0] * d[0] + r[1][0] * d[1] + r[2][0] * d[2];
    const double y = r[0][1] * d[0] + r[1][1] * d[1] + r[2][1] * d[2];
    const double z = r[0][2] * d[0] + r[1][2] * d[1] + r[2][2] * d[2];
    if (!(z > 0.0)) continue;
    const double u = k.fx * x / z + k.cx;
    const double v = k.fy * y / z + k.cy;
    if (u < 0.0 || v < 0.0 || u >= static_cast<double>(size) || v >= static_cast<double>(size)) continue;
    const auto iu = static_cast<std::size_t>(u);
    const auto iv = static_cast<std::size_t>(v);
    for (std::size_t dy = 0; dy < 2; ++dy) {
      for (std::size_t dx = 0; dx < 2; ++dx) {
        const std::size_t px = iu + dx, py = iv + dy;
        if (px >= size || py >= size) continue;
        const std::size_t idx = py * size + px;
        if (!(z < zbuf[idx])) continue;
        zbuf[idx] = z;
        out.depth.meters[idx] = static_cast<float>(z);
        for (std::size_t c = 0; c < 3; ++c) out.rgb.pixels[idx * 3 + c] = p.color[c];
      }
    }
  }
  return out;
}

Sequence render_sequence(const Scene& scene, const std::vector<Pose>& trajectory, const Intrinsics& k,
                         std::size_t size, std::string tag) {
  Sequence seq;
  seq.intrinsics = k;
  seq.tag = std::move(tag);
  for (const auto& pose : trajectory) {
    RenderedFrame r = render(scene, pose, k, size);
    Frame f;
    f.rgb = std::move(r.rgb);
    f.depth = std::move(r.depth);
    f.pose = pose;
    seq.frames.push_back(std::move(f));
  }
  return seq;
}

namespace {

void write_pose_file(const fs::path& path, const Pose& pose) {
  const Mat3 r = matrix_from_quat(pose.orientation);
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  for (int i = 0; i < 3; ++i) {
    std::fprintf(f, "%.17g\t%.17g\t%.17g\t%.17g\n", r[i][0], r[i][1], r[i][2], pose.position[i]);
  }
  std::fprintf(f, "0\t0\t0\t1\n");
  if (std::fclose(f) != 0) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace

void write_dataset(const Scene& scene, const std::vector<std::vector<Pose>>& trajectories, const Intrinsics& k,
                   std::size_t size, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  {
    std::ofstream intr(dir / "intrinsics.txt");
    if (!intr) throw IoError("cannot write '" + (dir / "intrinsics.txt").string() + "'");
    char line[128];
    std::snprintf(line, sizeof line, "%.17g %.17g %.17g %.17g\n", k.fx, k.fy, k.cx, k.cy);
    intr << line;
  }
  for (std::size_t t = 0; t < trajectories.size(); ++t) {
    char name[32];
    std::snprintf(name, sizeof name, "seq-%02zu", t + 1);
    const fs::path seq_dir = dir / name;
    fs::create_directories(seq_dir, ec);
    if (ec) throw IoError("cannot create '" + seq_dir.string() + "': " + ec.message());
    for (std::size_t i = 0; i < trajectories[t].size(); ++i) {
      const Pose& pose = trajectories[t][i];
      const RenderedFrame r = render(scene, pose, k, size);
      char stem[32];
      std::snprintf(stem, sizeof stem, "frame-%06zu", i);
      const std::string base = (seq_dir / stem).string();
      write_png8(base + ".color.png", r.rgb);
      Image16 depth;
      depth.width = size;
      depth.height = size;
      depth.pixels.resize(size * size);
      for (std::size_t p = 0; p < depth.pixels.size(); ++p) {
        const double m = r.depth.meters[p];
        depth.pixels[p] = m > 0.0 ? static_cast<std::uint16_t>(std::clamp(std::lround(m * 1000.0), 1L, 65534L))
                                  : std::uint16_t{65535};
      }
      write_png16(base + ".depth.png", depth);
      write_pose_file(base + ".pose.txt", pose);
    }
  }
}

}  // namespace cnnmap
