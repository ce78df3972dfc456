#include "cnnmap/pose.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "cnnmap/errors.hpp"

namespace cnnmap {

namespace {

constexpr double kNormEpsilon = 1e-12;
constexpr double kRotationTolerance = 1e-4;

}  // namespace

double Quaternion::norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

Quaternion Quaternion::normalized() const {
  const double n = norm();
  if (!(n > 0.0)) throw InvalidPoseError("quaternion has zero norm");
  return {w / n, x / n, y / n, z / n};
}

Quaternion Quaternion::canonical() const {
  Quaternion q = normalized();
  // w == 0 is a 180-degree turn; the first nonzero vector component decides.
  const double lead = q.w != 0.0 ? q.w : q.x != 0.0 ? q.x : q.y != 0.0 ? q.y : q.z;
  if (lead < 0.0) q = {-q.w, -q.x, -q.y, -q.z};
  return q;
}

Pose Pose::canonical(const Vec3& position, const Quaternion& orientation) {
  return Pose{position, orientation.canonical()};
}

PoseVector to_pose_vector(const Pose& pose) {
  const auto& q = pose.orientation;
  return {pose.position[0], pose.position[1], pose.position[2], q.w, q.x, q.y, q.z};
}

Pose from_pose_vector(std::span<const double, kPoseVectorLength> v) {
  return Pose{{v[0], v[1], v[2]}, {v[3], v[4], v[5], v[6]}};
}

namespace {

struct LossTerms {
  std::array<double, 3> dx;
  std::array<double, 4> dq;
  double nx;
  double nq;
};

LossTerms loss_terms(std::span<const double, kPoseVectorLength> pred, const Pose& target) {
  const Quaternion tq = target.orientation.normalized();
  LossTerms t{};
  for (int i = 0; i < 3; ++i) t.dx[i] = pred[i] - target.position[i];
  t.dq = {pred[3] - tq.w, pred[4] - tq.x, pred[5] - tq.y, pred[6] - tq.z};
  t.nx = std::hypot(t.dx[0], t.dx[1], t.dx[2]);
  t.nq = std::sqrt(t.dq[0] * t.dq[0] + t.dq[1] * t.dq[1] + t.dq[2] * t.dq[2] + t.dq[3] * t.dq[3]);
  return t;
}

}  // namespace

double pose_loss(std::span<const double, kPoseVectorLength> pred, const Pose& target, const LossConfig& cfg) {
  const LossTerms t = loss_terms(pred, target);
  return t.nx + cfg.beta * t.nq;
}

PoseVector pose_loss_grad(std::span<const double, kPoseVectorLength> pred, const Pose& target,
                          const LossConfig& cfg) {
  const LossTerms t = loss_terms(pred, target);
  const double sx = 1.0 / std::max(t.nx, kNormEpsilon);
  const double sq = cfg.beta / std::max(t.nq, kNormEpsilon);
  PoseVector g{};
  for (int i = 0; i < 3; ++i) g[i] = t.dx[i] * sx;
  for (int i = 0; i < 4; ++i) g[3 + i] = t.dq[i] * sq;
  return g;
}

Mat3 matrix_from_quat(const Quaternion& in) {
  const Quaternion q = in.normalized();
  const double w = q.w, x = q.x, y = q.y, z = q.z;
  return {{
      {1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)},
      {2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)},
      {2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)},
  }};
}

Quaternion quat_from_matrix(const Mat3& r) {
  double residual = 0.0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += r[k][i] * r[k][j];
      residual = std::max(residual, std::abs(s - (i == j ? 1.0 : 0.0)));
    }
  }
  const double det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) -
                     r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0]) +
                     r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
  if (!(residual <= kRotationTolerance)) {
    throw InvalidRotationError("matrix is not orthonormal (residual " + std::to_string(residual) + ")", residual);
  }
  if (!(std::abs(det - 1.0) <= kRotationTolerance)) {
    throw InvalidRotationError("matrix determinant is " + std::to_string(det) + ", expected +1",
                               std::abs(det - 1.0));
  }

  // Branch on the largest diagonal term for numerical stability.
  const double trace = r[0][0] + r[1][1] + r[2][2];
  Quaternion q;
  if (trace > 0.0) {
    const double s = 2.0 * std::sqrt(1.0 + trace);
    q = {0.25 * s, (r[2][1] - r[1][2]) / s, (r[0][2] - r[2][0]) / s, (r[1][0] - r[0][1]) / s};
  } else if (r[0][0] > r[1][1] && r[0][0] > r[2][2]) {
    const double s = 2.0 * std::sqrt(1.0 + r[0][0] - r[1][1] - r[2][2]);
    q = {(r[2][1] - r[1][2]) / s, 0.25 * s, (r[0][1] + r[1][0]) / s, (r[0][2] + r[2][0]) / s};
  } else if (r[1][1] > r[2][2]) {
    const double s = 2.0 * std::sqrt(1.0 + r[1][1] - r[0][0] - r[2][2]);
    q = {(r[0][2] - r[2][0]) / s, (r[0][1] + r[1][0]) / s, 0.25 * s, (r[1][2] + r[2][1]) / s};
  } else {
    const double s = 2.0 * std::sqrt(1.0 + r[2][2] - r[0][0] - r[1][1]);
    q = {(r[1][0] - r[0][1]) / s, (r[0][2] + r[2][0]) / s, (r[1][2] + r[2][1]) / s, 0.25 * s};
  }
  return q.canonical();
}

double angular_error_deg(const Quaternion& a, const Quaternion& b) {
  const Quaternion qa = a.normalized();
  const Quaternion qb = b.normalized();
  const double d = std::abs(qa.w * qb.w + qa.x * qb.x + qa.y * qb.y + qa.z * qb.z);
  return 2.0 * std::acos(std::min(1.0, d)) * 180.0 / std::numbers::pi;
}

double position_error(const Vec3& a, const Vec3& b) {
  return std::hypot(a[0] - b[0], a[1] - b[1], a[2] - b[2]);
}

}  // namespace cnnmap
