#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <vector>

#include "scrk/aggregator.hpp"
#include "scrk/common.hpp"
#include "scrk/covis.hpp"
#include "scrk/error.hpp"
#include "scrk/geometry.hpp"
#include "scrk/rng.hpp"
#include "scrk/scr.hpp"

namespace scrk {

struct SceneConfig {
  int landmarks = 100;
  int regions = 5;
  double aliased_fraction = 0.2;
  int train_cameras = 60;
  int query_cameras = 20;
  int width = 640;
  int height = 480;
  double focal = 500.0;
  double sigma_local = 0.01;
  double sigma_feat = 0.1;
  double pixel_noise = 0.0;
  int tokens = 16;
  int raw_local_dim = 256;
  int feat_dim = 768;

  // Layout, scene units.
  double region_spacing = 9.0;
  double region_half_width = 4.0;
  double region_half_height = 3.0;
  double facade_depth = 7.0;
  double facade_jitter = 2.5;

  std::uint64_t seed = 2024;

  int camera_count() const { return train_cameras + query_cameras; }
  int aliased_pairs() const {
    return static_cast<int>(std::lround(aliased_fraction * landmarks / 2.0));
  }

  CameraIntrinsics intrinsics() const {
    return {focal, focal, 0.5 * width, 0.5 * height, width, height};
  }

  void validate() const {
    SCRK_CHECK(aliased_fraction >= 0.0 && aliased_fraction <= 1.0,
               Errc::kInvalidArgument, "aliased_fraction must be in [0,1]");
    SCRK_CHECK(landmarks >= 1 && regions >= 1 && train_cameras >= 1 &&
                   query_cameras >= 0 && tokens >= 1 && raw_local_dim >= 1 &&
                   feat_dim >= 1,
               Errc::kInvalidArgument, "scene counts must be >= 1");
    SCRK_CHECK(sigma_local >= 0.0 && sigma_feat >= 0.0 && pixel_noise >= 0.0,
               Errc::kInvalidArgument, "noise levels must be >= 0");
    SCRK_CHECK(landmarks % regions == 0, Errc::kInfeasibleConfig,
               "landmarks must split evenly over regions");
    SCRK_CHECK(2 * aliased_pairs() <= landmarks, Errc::kInfeasibleConfig,
               "more aliased pairs than landmarks / 2");
    const int twins = regions / 2;
    SCRK_CHECK(aliased_pairs() <= twins * (landmarks / regions),
               Errc::kInfeasibleConfig,
               "not enough distinct region pairs for " +
                   std::to_string(aliased_pairs()) + " aliased pairs");
    intrinsics().validate();
  }
};

struct Landmark {
  int id = 0;
  SceneCoordinate position = SceneCoordinate::Zero();
  Eigen::VectorXd signature;  // raw_local_dim, unit norm
  int region = 0;
};

struct Observation {
  int landmark = 0;
  Keypoint keypoint = Keypoint::Zero();
};

struct SceneCamera {
  CameraEntry camera;
  bool query = false;
};

struct SyntheticScene {
  std::vector<Landmark> landmarks;
  std::vector<Eigen::VectorXd> backgrounds;  // per region, feat_dim
  Eigen::MatrixXd lift;                      // feat_dim x raw_local_dim
  std::vector<SceneCamera> cameras;
  std::vector<std::vector<Observation>> observations;  // per camera
  std::vector<std::pair<int, int>> aliased_pairs;

  std::vector<CameraEntry> entries(bool query) const {
    std::vector<CameraEntry> out;
    for (const auto& c : cameras)
      if (c.query == query) out.push_back(c.camera);
    return out;
  }

  std::set<int> aliased_landmarks() const {
    std::set<int> s;
    for (const auto& [a, b] : aliased_pairs) {
      s.insert(a);
      s.insert(b);
    }
    return s;
  }

  // Images seeing at least one member of an aliased pair.
  bool is_aliased_image(std::size_t camera_index) const {
    const auto s = aliased_landmarks();
    for (const auto& o : observations[camera_index])
      if (s.count(o.landmark)) return true;
    return false;
  }
};

namespace detail {

inline Eigen::VectorXd unit_gaussian(int dim, RngStream& rng) {
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v(i) = rng.normal();
  return v / v.norm();
}

// Trajectory parameter in [0,1] -> camera-to-world pose. Cameras face +z
// (x right, y down) and sweep along x across every region.
inline Pose trajectory_pose(double s, const SceneConfig& cfg) {
  const double x0 = -cfg.region_half_width + 1.0;
  const double x1 = (cfg.regions - 1) * cfg.region_spacing + cfg.region_half_width - 1.0;
  const double w = 2.0 * std::numbers::pi * s;
  const Eigen::Vector3d center(x0 + (x1 - x0) * s, 0.2 * std::sin(3.0 * w),
                               0.3 * std::sin(2.0 * w));
  const double yaw = 0.15 * std::sin(5.0 * w);
  const double pitch = 0.05 * std::sin(7.0 * w);
  const Eigen::Matrix3d r =
      (Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitY()) *
       Eigen::AngleAxisd(pitch, Eigen::Vector3d::UnitX()))
          .toRotationMatrix();
  return Pose::from_matrix(r, center);
}

}  // namespace detail

// Regions sit side by side along x. Aliased pairs are built between twin
// regions (r, r + ceil(R/2)): the leftmost landmarks of r are copied, shifted
// rigidly, into the twin with identical signatures, so a local-only regressor
// sees two consistent geometries for the same appearance.
inline SyntheticScene generate_scene(const SceneConfig& cfg) {
  cfg.validate();
  const RngStream root(cfg.seed, "scene");
  SyntheticScene scene;
  const int per_region = cfg.landmarks / cfg.regions;

  RngStream geo = root.child("landmarks");
  RngStream sig = root.child("signatures");
  for (int r = 0; r < cfg.regions; ++r) {
    std::vector<Landmark> region;
    for (int i = 0; i < per_region; ++i) {
      Landmark lm;
      lm.region = r;
      lm.position =
          SceneCoordinate(r * cfg.region_spacing +
                              geo.uniform(-cfg.region_half_width, cfg.region_half_width),
                          geo.uniform(-cfg.region_half_height, cfg.region_half_height),
                          cfg.facade_depth + geo.uniform(-cfg.facade_jitter, cfg.facade_jitter));
      lm.signature = detail::unit_gaussian(cfg.raw_local_dim, sig);
      round_f32_inplace(lm.signature);
      region.push_back(std::move(lm));
    }
    std::sort(region.begin(), region.end(), [](const Landmark& a, const Landmark& b) {
      return a.position.x() < b.position.x();
    });
    for (auto& lm : region) {
      lm.id = static_cast<int>(scene.landmarks.size());
      scene.landmarks.push_back(std::move(lm));
    }
  }

  const int shift = (cfg.regions + 1) / 2;
  int remaining = cfg.aliased_pairs();
  for (int r = 0; r + shift < cfg.regions && remaining > 0; ++r) {
    const int take = std::min(remaining, per_region);
    for (int i = 0; i < take; ++i) {
      const Landmark& src = scene.landmarks[r * per_region + i];
      Landmark& dst = scene.landmarks[(r + shift) * per_region + i];
      dst.position = src.position + Eigen::Vector3d(shift * cfg.region_spacing, 0, 0);
      dst.signature = src.signature;
      scene.aliased_pairs.emplace_back(src.id, dst.id);
    }
    remaining -= take;
  }

  RngStream bg = root.child("backgrounds");
  for (int r = 0; r < cfg.regions; ++r)
    scene.backgrounds.push_back(detail::unit_gaussian(cfg.feat_dim, bg));
  RngStream lift = root.child("lift");
  scene.lift.resize(cfg.feat_dim, cfg.raw_local_dim);
  const double ls = 1.0 / std::sqrt(static_cast<double>(cfg.feat_dim));
  for (Eigen::Index i = 0; i < scene.lift.size(); ++i)
    scene.lift.data()[i] = ls * lift.normal();

  // Queries are every (n / q)-th trajectory position, offset to avoid the ends.
  const int n = cfg.camera_count();
  std::vector<char> is_query(n, 0);
  for (int q = 0; q < cfg.query_cameras; ++q)
    is_query[static_cast<int>((q + 0.5) * n / cfg.query_cameras)] = 1;
  const CameraIntrinsics k = cfg.intrinsics();
  for (int i = 0; i < n; ++i) {
    const double s = n == 1 ? 0.0 : static_cast<double>(i) / (n - 1);
    scene.cameras.push_back(
        {{static_cast<ImageId>(i), detail::trajectory_pose(s, cfg), k}, is_query[i] != 0});
    std::vector<Observation> obs;
    for (const auto& lm : scene.landmarks) {
      const auto p = project(lm.position, scene.cameras.back().camera.pose, k);
      if (p && k.contains(*p)) obs.push_back({lm.id, *p});
    }
    scene.observations.push_back(std::move(obs));
  }
  return scene;
}

struct RenderedImage {
  ImageId image_id = 0;
  std::vector<LocalDescriptor> locals;  // raw descriptors with keypoints
  std::vector<SceneCoordinate> gt;      // per keypoint
  std::vector<int> landmark_ids;        // per keypoint
  VisualFeatureMap features;
};

inline RenderedImage render_image(const SyntheticScene& scene, std::size_t cam_index,
                                  const SceneConfig& cfg, const RngStream& rng) {
  const auto& cam = scene.cameras[cam_index].camera;
  RngStream r = rng.child("image", cam.id);
  RenderedImage img;
  img.image_id = cam.id;

  std::vector<std::vector<int>> strip_members(cfg.tokens);
  for (const auto& o : scene.observations[cam_index]) {
    const Landmark& lm = scene.landmarks[o.landmark];
    LocalDescriptor d;
    d.image_id = cam.id;
    d.keypoint = o.keypoint;
    if (cfg.pixel_noise > 0.0)
      d.keypoint += cfg.pixel_noise * Keypoint(r.normal(), r.normal());
    Eigen::VectorXd v = lm.signature;
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) += cfg.sigma_local * r.normal();
    d.values = v / v.norm();
    round_f32_inplace(d.values);
    img.locals.push_back(std::move(d));
    img.gt.push_back(lm.position);
    img.landmark_ids.push_back(lm.id);
    const int strip = std::min(
        cfg.tokens - 1, static_cast<int>(o.keypoint.x() * cfg.tokens / cam.intrinsics.width));
    strip_members[strip].push_back(lm.id);
  }

  // One token per vertical strip: region background where the strip's central
  // ray meets the facade, plus the mean lifted signature of its landmarks.
  img.features.image_id = cam.id;
  img.features.tokens.resize(cfg.tokens, cfg.feat_dim);
  const double ns = cfg.sigma_feat / std::sqrt(static_cast<double>(cfg.feat_dim));
  for (int t = 0; t < cfg.tokens; ++t) {
    const Keypoint mid((t + 0.5) * cam.intrinsics.width / cfg.tokens,
                       0.5 * cam.intrinsics.height);
    const Eigen::Vector3d ray =
        cam.pose.rotation() *
        Eigen::Vector3d((mid.x() - cam.intrinsics.cx) / cam.intrinsics.fx,
                        (mid.y() - cam.intrinsics.cy) / cam.intrinsics.fy, 1.0);
    const double depth = (cfg.facade_depth - cam.pose.center().z()) / ray.z();
    const double hit_x = cam.pose.center().x() + depth * ray.x();
    const int region = std::clamp(
        static_cast<int>(std::lround(hit_x / cfg.region_spacing)), 0, cfg.regions - 1);
    Eigen::VectorXd tok = scene.backgrounds[region];
    if (!strip_members[t].empty()) {
      Eigen::VectorXd mean = Eigen::VectorXd::Zero(cfg.raw_local_dim);
      for (int id : strip_members[t]) mean += scene.landmarks[id].signature;
      tok += scene.lift * (mean / static_cast<double>(strip_members[t].size()));
    }
    for (Eigen::Index i = 0; i < tok.size(); ++i) tok(i) += ns * r.normal();
    img.features.tokens.row(t) = tok.transpose();
  }
  round_f32_inplace(img.features.tokens);
  return img;
}

inline std::vector<RenderedImage> render_observations(const SyntheticScene& scene,
                                                      const SceneConfig& cfg,
                                                      const RngStream& rng) {
  std::vector<RenderedImage> out;
  for (std::size_t i = 0; i < scene.cameras.size(); ++i)
    out.push_back(render_image(scene, i, cfg, rng));
  return out;
}

}  // namespace scrk
