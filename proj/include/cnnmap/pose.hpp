#pragma once

#include <array>
#include <span>

namespace cnnmap {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<std::array<double, 3>, 3>;

/// Scalar-first quaternion (w, x, y, z).
struct Quaternion {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  double norm() const;
  Quaternion normalized() const;
  /// Unit length with w >= 0 (for w == 0, the first nonzero of x, y, z is
  /// positive). Throws InvalidPoseError for a zero quaternion.
  Quaternion canonical() const;

  friend bool operator==(const Quaternion&, const Quaternion&) = default;
};

/// Camera pose: position in meters plus orientation (camera-to-world).
struct Pose {
  Vec3 position{0.0, 0.0, 0.0};
  Quaternion orientation;

  /// Ground-truth form: orientation normalized and sign-canonicalized.
  static Pose canonical(const Vec3& position, const Quaternion& orientation);

  friend bool operator==(const Pose&, const Pose&) = default;
};

/// Network output layout: [x1, x2, x3, q_w, q_x, q_y, q_z].
inline constexpr std::size_t kPoseVectorLength = 7;
using PoseVector = std::array<double, kPoseVectorLength>;

PoseVector to_pose_vector(const Pose& pose);
Pose from_pose_vector(std::span<const double, kPoseVectorLength> v);

struct LossConfig {
  double beta = 250.0;
};

/// ||x_pred - x|| + beta * ||q_pred - q / ||q||||. The predicted quaternion
/// is used as-is; only the target is normalized.
double pose_loss(std::span<const double, kPoseVectorLength> pred, const Pose& target, const LossConfig& cfg);

/// Gradient of pose_loss with respect to `pred`. Each norm term uses
/// v / max(||v||, 1e-12), so the gradient is zero at the exact minimum.
PoseVector pose_loss_grad(std::span<const double, kPoseVectorLength> pred, const Pose& target,
                          const LossConfig& cfg);

Mat3 matrix_from_quat(const Quaternion& q);
/// Requires an orthonormal matrix (residual <= 1e-4) with det near +1;
/// otherwise throws InvalidRotationError carrying the residual.
Quaternion quat_from_matrix(const Mat3& r);

/// Rotation angle between two orientations in degrees, in [0, 180].
double angular_error_deg(const Quaternion& a, const Quaternion& b);
double position_error(const Vec3& a, const Vec3& b);

}  // namespace cnnmap
