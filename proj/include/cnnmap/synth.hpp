#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "cnnmap/dataset.hpp"
#include "cnnmap/pose.hpp"

namespace cnnmap {

struct ScenePoint {
  Vec3 position;
  std::array<std::uint8_t, 3> color;
};

/// Colored points on the faces of an axis-aligned cube centered at the
/// origin whose diagonal is `extent` meters.
struct Scene {
  std::vector<ScenePoint> points;
  std::uint64_t seed = 0;
  double extent = 0.0;

  double half_side() const;
};

/// Colors follow smooth random plane waves plus per-point noise, so views
/// are texture-rich yet vary smoothly with pose.
Scene generate_scene(std::uint64_t seed, std::size_t num_points, double extent);

enum class TrajectoryKind { circle, arc, random_walk };

struct TrajectorySpec {
  TrajectoryKind kind = TrajectoryKind::circle;
  double radius = 3.0;
  Vec3 center{0.0, 0.0, 0.0};
  std::size_t frame_count = 60;
  std::uint64_t seed = 0;
  double start_angle = 0.0;        // radians
  double sweep = 6.283185307179586;  // circle/arc angular span
};

/// Camera-to-world pose at `eye` looking at `target`; +Z forward, +X right,
/// +Y down, with world +Z as the up reference.
Pose look_at(const Vec3& eye, const Vec3& target);

/// Circle: eye_i = center + r (cos t_i, sin t_i, 0), t_i = start + i * sweep / n.
/// Arc spreads the frames over [start, start + sweep] inclusive. Random walk
/// perturbs angle, radius and height with seeded noise. All poses look at
/// the center.
std::vector<Pose> generate_trajectory(const TrajectorySpec& spec);

/// Concentric circles with staggered radius, height and phase; the layout
/// used for the multi-trajectory experiments.
struct RingLayout {
  std::size_t trajectories = 6;
  std::size_t frames = 60;
  double radius = 3.0;
  double radius_spread = 0.5;
  double height_spread = 0.5;
};

std::vector<TrajectorySpec> ring_layout(const RingLayout& layout);

struct RenderedFrame {
  Image8 rgb;
  DepthMap depth;
};

/// Point-splat pinhole render with a z-buffer (2x2 splat anchored at the
/// projected pixel). Background is black with depth 0.
RenderedFrame render(const Scene& scene, const Pose& pose, const Intrinsics& k, std::size_t size);

/// Writes one seq-NN folder per trajectory in 7-Scenes layout plus an
/// intrinsics.txt at the root. Depth is stored in millimeters (65535 invalid).
void write_dataset(const Scene& scene, const std::vector<std::vector<Pose>>& trajectories, const Intrinsics& k,
                   std::size_t size, const std::filesystem::path& dir);

/// Builds a Sequence directly in memory (no disk round trip).
Sequence render_sequence(const Scene& scene, const std::vector<Pose>& trajectory, const Intrinsics& k,
                         std::size_t size, std::string tag);

}  // namespace cnnmap
