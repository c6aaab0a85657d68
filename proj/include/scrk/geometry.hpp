#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>

#include "scrk/error.hpp"

namespace scrk {

using Keypoint = Eigen::Vector2d;
using SceneCoordinate = Eigen::Vector3d;

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  void validate() const {
    SCRK_CHECK(fx > 0.0 && fy > 0.0, Errc::kInvalidArgument,
               "focal lengths must be positive");
    SCRK_CHECK(width > 0 && height > 0, Errc::kInvalidArgument,
               "image size must be positive");
    SCRK_CHECK(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height,
               Errc::kInvalidArgument, "principal point outside image");
  }

  bool contains(const Keypoint& p) const {
    return p.x() >= 0.0 && p.x() < width && p.y() >= 0.0 && p.y() < height;
  }

  Eigen::Matrix3d matrix() const {
    Eigen::Matrix3d k;
    k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return k;
  }

  bool operator==(const CameraIntrinsics&) const = default;
};

// Camera-to-world rigid transform. The unit quaternion (w >= 0) is the
// canonical state; the rotation matrix is derived from it.
class Pose {
 public:
  Pose() : Pose(Eigen::Quaterniond::Identity(), Eigen::Vector3d::Zero()) {}

  Pose(const Eigen::Quaterniond& q, const Eigen::Vector3d& translation)
      : quat_(q), translation_(translation) {
    const double n = quat_.norm();
    SCRK_CHECK(n > 0.0 && std::isfinite(n), Errc::kInvalidArgument,
               "invalid quaternion");
    if (std::abs(n - 1.0) > 1e-12) quat_.coeffs() /= n;
    if (quat_.w() < 0.0) quat_.coeffs() = -quat_.coeffs();
    rotation_ = quat_.toRotationMatrix();
  }

  static Pose from_matrix(const Eigen::Matrix3d& rotation,
                          const Eigen::Vector3d& translation) {
    return Pose(Eigen::Quaterniond(rotation), translation);
  }

  // Pose whose world-to-camera transform is x_cam = r * x + t.
  static Pose from_world_to_camera(const Eigen::Matrix3d& r,
                                   const Eigen::Vector3d& t) {
    return from_matrix(r.transpose(), -r.transpose() * t);
  }

  const Eigen::Matrix3d& rotation() const { return rotation_; }
  const Eigen::Vector3d& translation() const { return translation_; }
  const Eigen::Quaterniond& quaternion() const { return quat_; }
  const Eigen::Vector3d& center() const { return translation_; }

  Eigen::Vector3d world_to_camera(const Eigen::Vector3d& x) const {
    return rotation_.transpose() * (x - translation_);
  }
  Eigen::Vector3d camera_to_world(const Eigen::Vector3d& x) const {
    return rotation_ * x + translation_;
  }

  // Applies a rigid world transform: returns T * this.
  Pose transformed(const Eigen::Matrix3d& r, const Eigen::Vector3d& t) const {
    return from_matrix(r * rotation_, r * translation_ + t);
  }

  bool operator==(const Pose& other) const {
    return quat_.coeffs() == other.quat_.coeffs() &&
           translation_ == other.translation_;
  }

 private:
  Eigen::Quaterniond quat_;
  Eigen::Vector3d translation_;
  Eigen::Matrix3d rotation_;
};

inline constexpr double kMinProjectionDepth = 1e-6;

// Returns nullopt when the point lies behind the camera.
inline std::optional<Keypoint> project(const SceneCoordinate& point,
                                       const Pose& pose,
                                       const CameraIntrinsics& k) {
  const Eigen::Vector3d pc = pose.world_to_camera(point);
  if (!(pc.z() > kMinProjectionDepth)) return std::nullopt;
  return Keypoint(k.fx * pc.x() / pc.z() + k.cx, k.fy * pc.y() / pc.z() + k.cy);
}

inline SceneCoordinate unproject(const Keypoint& pixel, double depth,
                                 const CameraIntrinsics& k, const Pose& pose) {
  SCRK_CHECK(depth > 0.0, Errc::kNonPositiveDepth,
             "depth must be positive, got " + std::to_string(depth));
  const Eigen::Vector3d pc((pixel.x() - k.cx) / k.fx * depth,
                           (pixel.y() - k.cy) / k.fy * depth, depth);
  return pose.camera_to_world(pc);
}

inline std::optional<double> reprojection_residual(const SceneCoordinate& coord,
                                                   const Keypoint& kp,
                                                   const Pose& pose,
                                                   const CameraIntrinsics& k) {
  const auto p = project(coord, pose, k);
  if (!p) return std::nullopt;
  return (*p - kp).norm();
}

struct PoseError {
  double translation = 0.0;
  double rotation_deg = 0.0;
};

// Same angle as arccos((trace(AᵀB) - 1) / 2), evaluated through atan2 so that
// tiny angles do not collapse onto the flat top of arccos.
inline double rotation_angle_deg(const Eigen::Matrix3d& a,
                                 const Eigen::Matrix3d& b) {
  const Eigen::Matrix3d d = a.transpose() * b;
  const double cos2 = std::clamp(d.trace() - 1.0, -2.0, 2.0);
  const Eigen::Vector3d v(d(2, 1) - d(1, 2), d(0, 2) - d(2, 0),
                          d(1, 0) - d(0, 1));
  return std::atan2(v.norm(), cos2) * 180.0 / std::numbers::pi;
}

inline PoseError pose_error(const Pose& estimate, const Pose& truth) {
  return {(estimate.center() - truth.center()).norm(),
          rotation_angle_deg(estimate.rotation(), truth.rotation())};
}

}  // namespace scrk
