#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cnnmap/image.hpp"
#include "cnnmap/model.hpp"
#include "cnnmap/pose.hpp"
#include "cnnmap/tensor.hpp"

namespace cnnmap {

struct Intrinsics {
  double fx = 525.0;
  double fy = 525.0;
  double cx = 319.5;
  double cy = 239.5;

  static Intrinsics tum() { return {525.0, 525.0, 319.5, 239.5}; }
  static Intrinsics seven_scenes() { return {585.0, 585.0, 320.0, 240.0}; }
  static Intrinsics synthetic() { return {70.0, 70.0, 32.0, 32.0}; }
};

/// Depth in meters, row-major; 0 marks an invalid pixel.
struct DepthMap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> meters;

  float at(std::size_t x, std::size_t y) const { return meters[y * width + x]; }
};

/// Organized point cloud: per-pixel camera-frame XYZ, row-major, interleaved.
struct PointMap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> xyz;
};

enum class DepthEncoding {
  tum,          // u16 / 5000 = meters, 0 invalid
  millimeters,  // u16 / 1000 = meters, 0 and 65535 invalid
};

float decode_depth(std::uint16_t raw, DepthEncoding encoding);

/// One sensor sample. Images are either decoded in memory or referenced by
/// file and decoded on demand with `decoded()`.
struct Frame {
  std::optional<Image8> rgb;
  std::optional<DepthMap> depth;
  std::optional<std::filesystem::path> rgb_file;
  std::optional<std::filesystem::path> depth_file;
  DepthEncoding depth_encoding = DepthEncoding::millimeters;
  Pose pose;
  std::optional<double> timestamp;

  bool has_rgb() const { return rgb.has_value() || rgb_file.has_value(); }
  bool has_depth() const { return depth.has_value() || depth_file.has_value(); }
  /// Copy with every referenced image read from disk.
  Frame decoded() const;
};

struct Sequence {
  std::vector<Frame> frames;
  Intrinsics intrinsics;
  std::string tag;
};

/// TUM RGB-D layout: groundtruth.txt ("t tx ty tz qx qy qz qw"), rgb/ and
/// depth/ with timestamped PNG names (rgb.txt / depth.txt used when present).
Sequence load_tum_sequence(const std::filesystem::path& dir, double assoc_tolerance = 0.02);

/// 7-Scenes layout: frame-NNNNNN.{color.png,depth.png,pose.txt}. An
/// optional intrinsics.txt ("fx fy cx cy") in the folder or its parent
/// overrides the default intrinsics.
Sequence load_7scenes_sequence(const std::filesystem::path& dir);

/// CSV with header image,tx,ty,tz,qw,qx,qy,qz; image paths relative to the CSV.
Sequence load_manifest_sequence(const std::filesystem::path& csv_path);

/// Picks the loader from the layout: groundtruth.txt -> TUM, *.csv ->
/// manifest, frame-*.pose.txt -> 7-Scenes.
Sequence load_sequence_auto(const std::filesystem::path& path);

/// Greedy nearest-timestamp matching; each target is used at most once.
/// Returns (index into `a`, index into `b`) pairs ordered by `a`.
std::vector<std::pair<std::size_t, std::size_t>> associate_timestamps(const std::vector<double>& a,
                                                                      const std::vector<double>& b,
                                                                      double tolerance);

PointMap backproject(const DepthMap& depth, const Intrinsics& k);

/// Center-crops to the largest centered square, bilinearly resizes to
/// out_size, and stacks channels for `spec`: color in [-0.5, 0.5] (gray is
/// Rec. 601 luma), depth and XYZ in meters. Point maps are computed at
/// native resolution before cropping. Throws MissingModalityError.
Tensor<float> assemble_input(const Frame& frame, const InputSpec& spec, const Intrinsics& k, std::size_t out_size);

}  // namespace cnnmap
