#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>
#include <Eigen/SVD>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <vector>

#include "scrk/aggregator.hpp"
#include "scrk/common.hpp"
#include "scrk/covis.hpp"
#include "scrk/error.hpp"
#include "scrk/geometry.hpp"
#include "scrk/numeric.hpp"
#include "scrk/rng.hpp"
#include "scrk/scr.hpp"

namespace scrk {

// ---------------------------------------------------------------------------
// Retrieval index

struct PqOptions {
  int subspaces = 8;
  int centroids = 256;
  int iterations = 25;
  std::uint64_t seed = 0;
};

struct PqCodebook {
  int subspaces = 0;
  std::vector<Eigen::MatrixXd> codebooks;  // per sub-block: k x sub_dim
  std::vector<std::uint8_t> codes;         // entry-major, subspaces per entry

  int sub_dim() const {
    return codebooks.empty() ? 0 : static_cast<int>(codebooks[0].cols());
  }
  int centroids() const {
    return codebooks.empty() ? 0 : static_cast<int>(codebooks[0].rows());
  }
  bool operator==(const PqCodebook& o) const {
    if (subspaces != o.subspaces || codes != o.codes ||
        codebooks.size() != o.codebooks.size())
      return false;
    for (std::size_t i = 0; i < codebooks.size(); ++i)
      if (codebooks[i].rows() != o.codebooks[i].rows() ||
          codebooks[i].cols() != o.codebooks[i].cols() ||
          codebooks[i] != o.codebooks[i])
        return false;
    return true;
  }
};

struct RetrievalIndex {
  std::vector<ImageId> ids;
  Eigen::MatrixXd entries;  // one descriptor per row
  std::optional<PqCodebook> pq;

  std::size_t size() const { return ids.size(); }
  int dim() const { return static_cast<int>(entries.cols()); }

  Eigen::VectorXd reconstruct(std::size_t row) const {
    if (!pq) return entries.row(row).transpose();
    const int sd = pq->sub_dim();
    Eigen::VectorXd out(dim());
    for (int m = 0; m < pq->subspaces; ++m)
      out.segment(m * sd, sd) =
          pq->codebooks[m].row(pq->codes[row * pq->subspaces + m]).transpose();
    return out;
  }

  bool operator==(const RetrievalIndex& o) const {
    return ids == o.ids && entries.rows() == o.entries.rows() &&
           entries.cols() == o.entries.cols() && entries == o.entries &&
           pq == o.pq;
  }
};

inline PqCodebook train_pq(const Eigen::MatrixXd& entries, const PqOptions& opt) {
  const auto n = entries.rows();
  const int dim = static_cast<int>(entries.cols());
  SCRK_CHECK(opt.subspaces >= 1 && dim % opt.subspaces == 0,
             Errc::kIndivisibleDimension,
             "pq subspaces " + std::to_string(opt.subspaces) +
                 " do not divide dim " + std::to_string(dim));
  SCRK_CHECK(opt.centroids >= 1 && opt.centroids <= 256,
             Errc::kInvalidArgument, "pq centroids must be in [1, 256]");
  const int sd = dim / opt.subspaces;
  const int k = static_cast<int>(std::min<Eigen::Index>(opt.centroids, n));
  const RngStream root(opt.seed, "pq");
  PqCodebook pq;
  pq.subspaces = opt.subspaces;
  pq.codes.assign(static_cast<std::size_t>(n) * opt.subspaces, 0);
  for (int m = 0; m < opt.subspaces; ++m) {
    const Eigen::MatrixXd block = entries.middleCols(m * sd, sd);
    auto km = kmeans(block, k, opt.iterations, root.child("subspace", m));
    round_f32_inplace(km.centroids);
    std::vector<int> assign;
    detail::assign_points(block, km.centroids, assign);
    for (Eigen::Index i = 0; i < n; ++i)
      pq.codes[i * opt.subspaces + m] = static_cast<std::uint8_t>(assign[i]);
    pq.codebooks.push_back(std::move(km.centroids));
  }
  return pq;
}

inline RetrievalIndex build_index(const std::vector<GlobalDescriptor>& descriptors,
                                  const std::optional<PqOptions>& pq = std::nullopt) {
  SCRK_CHECK(!descriptors.empty(), Errc::kEmptyInput, "no descriptors to index");
  const auto dim = descriptors.front().values.size();
  RetrievalIndex index;
  index.entries.resize(static_cast<Eigen::Index>(descriptors.size()), dim);
  for (std::size_t r = 0; r < descriptors.size(); ++r) {
    SCRK_CHECK(descriptors[r].values.size() == dim, Errc::kDimensionMismatch,
               "non-uniform descriptor dims");
    index.ids.push_back(descriptors[r].image_id);
    index.entries.row(r) = descriptors[r].values.transpose();
  }
  if (pq) index.pq = train_pq(index.entries, *pq);
  return index;
}

enum class SearchMode { kExact, kPq };

struct ScoredId {
  ImageId id = 0;
  double score = 0.0;
};

// Cosine scores for all entries. PQ mode scores the reconstructions through
// per-subspace lookup tables (asymmetric: the query stays uncompressed).
inline std::vector<ScoredId> score_all(const RetrievalIndex& index,
                                       const Eigen::VectorXd& query,
                                       SearchMode mode) {
  SCRK_CHECK(query.size() == index.dim(), Errc::kDimensionMismatch,
             "query dim does not match index");
  const double qn = query.norm();
  std::vector<ScoredId> out(index.size());
  if (mode == SearchMode::kExact) {
    const Eigen::VectorXd dots = index.entries * query;
    for (std::size_t r = 0; r < index.size(); ++r)
      out[r] = {index.ids[r], dots(r) / (qn * index.entries.row(r).norm())};
    return out;
  }
  SCRK_CHECK(index.pq.has_value(), Errc::kInvalidArgument,
             "index has no product quantizer");
  const auto& pq = *index.pq;
  const int sd = pq.sub_dim();
  std::vector<Eigen::VectorXd> dot_table, norm_table;
  for (int m = 0; m < pq.subspaces; ++m) {
    dot_table.push_back(pq.codebooks[m] * query.segment(m * sd, sd));
    norm_table.push_back(pq.codebooks[m].rowwise().squaredNorm());
  }
  for (std::size_t r = 0; r < index.size(); ++r) {
    double dot = 0.0, nn = 0.0;
    for (int m = 0; m < pq.subspaces; ++m) {
      const int c = pq.codes[r * pq.subspaces + m];
      dot += dot_table[m](c);
      nn += norm_table[m](c);
    }
    out[r] = {index.ids[r], dot / (qn * std::sqrt(nn))};
  }
  return out;
}

inline std::vector<ImageId> retrieve_topk(const RetrievalIndex& index,
                                          const Eigen::VectorXd& query,
                                          std::size_t k,
                                          SearchMode mode = SearchMode::kExact) {
  SCRK_CHECK(k <= index.size(), Errc::kKTooLarge,
             "k = " + std::to_string(k) + " exceeds index size " +
                 std::to_string(index.size()));
  auto scored = score_all(index, query, mode);
  auto better = [](const ScoredId& a, const ScoredId& b) {
    return a.score != b.score ? a.score > b.score : a.id < b.id;
  };
  std::partial_sort(scored.begin(), scored.begin() + k, scored.end(), better);
  std::vector<ImageId> ids;
  for (std::size_t i = 0; i < k; ++i) ids.push_back(scored[i].id);
  return ids;
}

// ---------------------------------------------------------------------------
// Minimal solver

struct Correspondence2D3D {
  Keypoint keypoint = Keypoint::Zero();
  SceneCoordinate coordinate = SceneCoordinate::Zero();
};

// World-to-camera rigid transform x_c = r * x + t.
struct RigidTransform {
  Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();

  Pose pose() const { return Pose::from_world_to_camera(r, t); }
};

namespace detail {

using Poly = std::vector<double>;  // coefficients, lowest degree first

inline Poly poly_mul(const Poly& a, const Poly& b) {
  Poly out(a.size() + b.size() - 1, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) out[i + j] += a[i] * b[j];
  return out;
}

inline Poly poly_add(const Poly& a, const Poly& b, double sb = 1.0) {
  Poly out(std::max(a.size(), b.size()), 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] += a[i];
  for (std::size_t i = 0; i < b.size(); ++i) out[i] += sb * b[i];
  return out;
}

inline double poly_eval(const Poly& p, double x) {
  double v = 0.0;
  for (auto it = p.rbegin(); it != p.rend(); ++it) v = v * x + *it;
  return v;
}

inline std::vector<double> real_roots(Poly p) {
  double scale = 0.0;
  for (double c : p) scale = std::max(scale, std::abs(c));
  if (scale == 0.0) return {};
  while (p.size() > 1 && std::abs(p.back()) <= 1e-14 * scale) p.pop_back();
  const int deg = static_cast<int>(p.size()) - 1;
  if (deg < 1) return {};
  Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(deg, deg);
  for (int i = 1; i < deg; ++i) comp(i, i - 1) = 1.0;
  for (int i = 0; i < deg; ++i) comp(i, deg - 1) = -p[i] / p[deg];
  Eigen::EigenSolver<Eigen::MatrixXd> es(comp, false);
  Poly dp;
  for (int i = 1; i <= deg; ++i) dp.push_back(i * p[i]);
  std::vector<double> roots;
  for (int i = 0; i < deg; ++i) {
    const auto z = es.eigenvalues()(i);
    if (std::abs(z.imag()) > 1e-6 * (1.0 + std::abs(z.real()))) continue;
    double x = z.real();
    for (int it = 0; it < 5; ++it) {
      const double d = poly_eval(dp, x);
      if (d == 0.0) break;
      const double step = poly_eval(p, x) / d;
      x -= step;
      if (std::abs(step) < 1e-15 * (1.0 + std::abs(x))) break;
    }
    roots.push_back(x);
  }
  return roots;
}

inline Eigen::Vector3d bearing(const Keypoint& kp, const CameraIntrinsics& k) {
  return Eigen::Vector3d((kp.x() - k.cx) / k.fx, (kp.y() - k.cy) / k.fy, 1.0)
      .normalized();
}

// Rigid transform mapping world points onto camera points (least squares).
inline RigidTransform kabsch(const std::vector<Eigen::Vector3d>& world,
                             const std::vector<Eigen::Vector3d>& cam) {
  Eigen::Vector3d cw = Eigen::Vector3d::Zero(), cc = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < world.size(); ++i) {
    cw += world[i];
    cc += cam[i];
  }
  cw /= static_cast<double>(world.size());
  cc /= static_cast<double>(cam.size());
  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  for (std::size_t i = 0; i < world.size(); ++i)
    h += (world[i] - cw) * (cam[i] - cc).transpose();
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Matrix3d& u = svd.matrixU();
  const Eigen::Matrix3d& v = svd.matrixV();
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  d(2, 2) = (v * u.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  RigidTransform out;
  out.r = v * d * u.transpose();
  out.t = cc - out.r * cw;
  return out;
}

}  // namespace detail

// Three-point resection. With u = s2/s1 and v = s3/s1 (distances along the
// bearings), the law of cosines gives two quadrics in (u, v); eliminating u^2
// leaves u rational in v, and back-substitution a quartic in v.
inline std::vector<RigidTransform> p3p(const std::array<Eigen::Vector3d, 3>& bearings,
                                       const std::array<Eigen::Vector3d, 3>& world) {
  using detail::Poly;
  const double a2 = (world[1] - world[2]).squaredNorm();
  const double b2 = (world[0] - world[2]).squaredNorm();
  const double c2 = (world[0] - world[1]).squaredNorm();
  if (a2 < 1e-18 || b2 < 1e-18 || c2 < 1e-18) return {};
  const double ca = bearings[1].dot(bearings[2]);
  const double cb = bearings[0].dot(bearings[2]);
  const double cg = bearings[0].dot(bearings[1]);

  const Poly q{1.0, -2.0 * cb, 1.0};                       // 1 + v^2 - 2 v cb
  const Poly num = detail::poly_add(detail::poly_mul({c2 - a2}, q),
                                    Poly{-b2, 0.0, b2});   // u numerator
  const Poly den{-2.0 * b2 * cg, 2.0 * b2 * ca};           // u denominator
  Poly quartic = detail::poly_mul({b2}, detail::poly_mul(num, num));
  quartic = detail::poly_add(quartic,
                             detail::poly_mul({-2.0 * b2 * cg}, detail::poly_mul(num, den)));
  quartic = detail::poly_add(
      quartic, detail::poly_mul(detail::poly_add({b2}, detail::poly_mul({c2}, q), -1.0),
                                detail::poly_mul(den, den)));

  std::vector<RigidTransform> out;
  for (double v : detail::real_roots(quartic)) {
    if (!(v > 0.0)) continue;
    const double dv = detail::poly_eval(den, v);
    if (std::abs(dv) < 1e-12 * b2) continue;
    const double u = detail::poly_eval(num, v) / dv;
    const double qv = detail::poly_eval(q, v);
    if (!(u > 0.0) || !(qv > 0.0)) continue;
    const double s1 = std::sqrt(b2 / qv);
    const std::vector<Eigen::Vector3d> cam{s1 * bearings[0], u * s1 * bearings[1],
                                           v * s1 * bearings[2]};
    out.push_back(detail::kabsch({world[0], world[1], world[2]}, cam));
  }
  return out;
}

// ---------------------------------------------------------------------------
// RANSAC + refinement

struct RansacConfig {
  int max_iterations = 1000;
  double inlier_threshold = 10.0;
  int min_inliers = 10;
  int refine_iterations = 20;
  double confidence = 0.999;
  std::uint64_t seed = 0;

  void validate() const {
    SCRK_CHECK(max_iterations >= 1 && inlier_threshold > 0.0 &&
                   min_inliers >= 1 && refine_iterations >= 1 &&
                   confidence > 0.0 && confidence < 1.0,
               Errc::kInvalidArgument, "invalid ransac config");
  }
};

struct HypothesisDiagnostic {
  int hypothesis = 0;
  ImageId source_image = 0;  // image whose global descriptor conditioned it
  bool found = false;
  int inliers = 0;
  double mean_residual = 0.0;
};

struct LocalizationResult {
  Pose pose;
  int inliers = 0;
  double mean_inlier_residual = 0.0;
  int hypothesis = 0;
  std::vector<HypothesisDiagnostic> diagnostics;
};

struct InlierStats {
  int count = 0;
  double mean_residual = 0.0;
};

inline InlierStats count_inliers(const std::vector<Correspondence2D3D>& corr,
                                 const Pose& pose, const CameraIntrinsics& k,
                                 double threshold) {
  InlierStats s;
  double sum = 0.0;
  for (const auto& c : corr) {
    const auto r = reprojection_residual(c.coordinate, c.keypoint, pose, k);
    if (r && *r <= threshold) {
      ++s.count;
      sum += *r;
    }
  }
  s.mean_residual = s.count > 0 ? sum / s.count : 0.0;
  return s;
}

namespace detail {

inline double reproj_cost(const std::vector<Correspondence2D3D>& pts,
                          const RigidTransform& x, const CameraIntrinsics& k) {
  double cost = 0.0;
  for (const auto& c : pts) {
    const Eigen::Vector3d p = x.r * c.coordinate + x.t;
    if (!(p.z() > kMinProjectionDepth)) return std::numeric_limits<double>::infinity();
    const Eigen::Vector2d e(k.fx * p.x() / p.z() + k.cx - c.keypoint.x(),
                            k.fy * p.y() / p.z() + k.cy - c.keypoint.y());
    cost += e.squaredNorm();
  }
  return cost;
}

inline Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

}  // namespace detail

// Levenberg-Marquardt on squared reprojection error, left-perturbing the
// world-to-camera transform.
inline RigidTransform refine_pose(const std::vector<Correspondence2D3D>& pts,
                                  RigidTransform x, const CameraIntrinsics& k,
                                  int iterations) {
  double cost = detail::reproj_cost(pts, x, k);
  if (!std::isfinite(cost)) return x;
  double lambda = 1e-3;
  for (int it = 0; it < iterations; ++it) {
    Eigen::Matrix<double, 6, 6> h = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
    for (const auto& c : pts) {
      const Eigen::Vector3d p = x.r * c.coordinate + x.t;
      const double iz = 1.0 / p.z();
      const Eigen::Vector2d e(k.fx * p.x() * iz + k.cx - c.keypoint.x(),
                              k.fy * p.y() * iz + k.cy - c.keypoint.y());
      Eigen::Matrix<double, 2, 3> jp;
      jp << k.fx * iz, 0.0, -k.fx * p.x() * iz * iz, 0.0, k.fy * iz,
          -k.fy * p.y() * iz * iz;
      Eigen::Matrix<double, 2, 6> j;
      j.leftCols<3>() = -jp * detail::skew(p);
      j.rightCols<3>() = jp;
      h += j.transpose() * j;
      g += j.transpose() * e;
    }
    bool improved = false;
    while (lambda < 1e12) {
      Eigen::Matrix<double, 6, 6> damped = h;
      damped.diagonal() += lambda * h.diagonal().cwiseMax(1e-12);
      const Eigen::Matrix<double, 6, 1> delta = damped.ldlt().solve(-g);
      const Eigen::Vector3d w = delta.head<3>();
      const double angle = w.norm();
      const Eigen::Matrix3d dr =
          angle > 0.0 ? Eigen::AngleAxisd(angle, w / angle).toRotationMatrix()
                      : Eigen::Matrix3d::Identity();
      RigidTransform cand{dr * x.r, dr * x.t + delta.tail<3>()};
      const double c = detail::reproj_cost(pts, cand, k);
      if (c < cost) {
        const double gain = cost - c;
        x = cand;
        cost = c;
        lambda = std::max(lambda * 0.1, 1e-12);
        improved = true;
        if (gain <= 1e-14 * (1.0 + cost) || delta.norm() < 1e-14) return x;
        break;
      }
      lambda *= 10.0;
    }
    if (!improved) break;
  }
  return x;
}

inline std::optional<LocalizationResult> solve_pnp_ransac(
    const std::vector<Correspondence2D3D>& corr, const CameraIntrinsics& k,
    const RansacConfig& cfg) {
  cfg.validate();
  SCRK_CHECK(corr.size() >= 4, Errc::kPreconditionViolation,
             "pnp needs at least 4 correspondences, got " +
                 std::to_string(corr.size()));
  for (const auto& c : corr)
    SCRK_CHECK(c.keypoint.allFinite() && c.coordinate.allFinite(),
               Errc::kInvalidArgument, "non-finite correspondence");

  std::vector<Eigen::Vector3d> bearings;
  bearings.reserve(corr.size());
  for (const auto& c : corr) bearings.push_back(detail::bearing(c.keypoint, k));

  RngStream rng(cfg.seed, "ransac");
  std::optional<RigidTransform> best;
  int best_count = -1;
  double best_sum = 0.0;
  double needed = cfg.max_iterations;
  for (int it = 0; it < cfg.max_iterations && it < needed; ++it) {
    const auto s = sample_without_replacement(corr.size(), 4, rng);
    const Eigen::Vector3d& x0 = corr[s[0]].coordinate;
    const double area =
        (corr[s[1]].coordinate - x0).cross(corr[s[2]].coordinate - x0).norm();
    if (area < 1e-12) continue;
    const auto sols = p3p({bearings[s[0]], bearings[s[1]], bearings[s[2]]},
                          {corr[s[0]].coordinate, corr[s[1]].coordinate,
                           corr[s[2]].coordinate});
    std::optional<RigidTransform> pick;
    double pick_err = std::numeric_limits<double>::infinity();
    for (const auto& sol : sols) {
      const Eigen::Vector3d p = sol.r * corr[s[3]].coordinate + sol.t;
      if (!(p.z() > kMinProjectionDepth)) continue;
      const Eigen::Vector2d proj(k.fx * p.x() / p.z() + k.cx,
                                 k.fy * p.y() / p.z() + k.cy);
      const double err = (proj - corr[s[3]].keypoint).norm();
      if (err < pick_err) {
        pick_err = err;
        pick = sol;
      }
    }
    if (!pick) continue;
    int count = 0;
    double sum = 0.0;
    for (const auto& c : corr) {
      const Eigen::Vector3d p = pick->r * c.coordinate + pick->t;
      if (!(p.z() > kMinProjectionDepth)) continue;
      const double e = (Eigen::Vector2d(k.fx * p.x() / p.z() + k.cx,
                                        k.fy * p.y() / p.z() + k.cy) -
                        c.keypoint)
                           .norm();
      if (e <= cfg.inlier_threshold) {
        ++count;
        sum += e;
      }
    }
    if (count > best_count || (count == best_count && sum < best_sum)) {
      best_count = count;
      best_sum = sum;
      best = pick;
      const double w = static_cast<double>(count) / corr.size();
      const double fail = 1.0 - std::pow(w, 4);
      if (fail <= 0.0) {
        needed = 0;
      } else if (fail < 1.0) {
        needed = std::log(1.0 - cfg.confidence) / std::log(fail);
      }
    }
  }
  if (!best || best_count < cfg.min_inliers) return std::nullopt;

  // Refine on inliers, re-select inliers, refine again.
  RigidTransform x = *best;
  for (int round = 0; round < 2; ++round) {
    std::vector<Correspondence2D3D> inl;
    const Pose p = x.pose();
    for (const auto& c : corr) {
      const auto r = reprojection_residual(c.coordinate, c.keypoint, p, k);
      if (r && *r <= cfg.inlier_threshold) inl.push_back(c);
    }
    if (inl.size() < 4) break;
    x = refine_pose(inl, x, k, cfg.refine_iterations);
  }

  const Pose raw = best->pose();
  const Pose refined = x.pose();
  const InlierStats s_raw = count_inliers(corr, raw, k, cfg.inlier_threshold);
  const InlierStats s_ref = count_inliers(corr, refined, k, cfg.inlier_threshold);
  const bool use_refined = s_ref.count >= s_raw.count;
  const InlierStats& s = use_refined ? s_ref : s_raw;
  if (s.count < cfg.min_inliers) return std::nullopt;
  LocalizationResult out;
  out.pose = use_refined ? refined : raw;
  out.inliers = s.count;
  out.mean_inlier_residual = s.mean_residual;
  return out;
}

// ---------------------------------------------------------------------------
// Multi-hypothesis query localization

struct LocalizationModels {
  AggregatorModel aggregator;
  PcaModel global_pca;
  ScrModel scr;
};

// Hypothesis 0 conditions on the query's own global descriptor; hypotheses
// 1..k-1 on the descriptors of the top retrieved training images. The result
// with the most inliers wins, ties going to the lower mean residual.
inline std::optional<LocalizationResult> localize_query(
    const VisualFeatureMap& query_features, const std::vector<LocalDescriptor>& locals,
    const CameraIntrinsics& intrinsics, const LocalizationModels& models,
    const RetrievalIndex& index,
    const std::map<ImageId, Eigen::VectorXd>& training_globals, std::size_t k,
    const RansacConfig& cfg, SearchMode mode = SearchMode::kExact,
    std::vector<HypothesisDiagnostic>* diagnostics_out = nullptr) {
  SCRK_CHECK(k >= 1, Errc::kInvalidArgument, "k must be >= 1");
  SCRK_CHECK(locals.size() >= 4, Errc::kPreconditionViolation,
             "query has fewer than 4 keypoints");
  const GlobalDescriptor own =
      global_descriptor(query_features, models.aggregator, models.global_pca);

  std::vector<std::pair<ImageId, Eigen::VectorXd>> hyps{{own.image_id, own.values}};
  for (ImageId id : retrieve_topk(index, own.values, k - 1, mode)) {
    auto it = training_globals.find(id);
    SCRK_CHECK(it != training_globals.end(), Errc::kIdMismatch,
               "no stored descriptor for retrieved image " + std::to_string(id));
    hyps.emplace_back(id, it->second);
  }

  const ScrModel& scr = models.scr;
  Eigen::MatrixXd input(scr.arch.input_dim(), static_cast<Eigen::Index>(locals.size()));
  for (std::size_t c = 0; c < locals.size(); ++c)
    input.col(c).tail(scr.arch.local_dim) = compress_local(scr, locals[c].values);

  std::optional<LocalizationResult> best;
  std::vector<HypothesisDiagnostic> diags;
  for (std::size_t h = 0; h < hyps.size(); ++h) {
    SCRK_CHECK(hyps[h].second.size() == scr.arch.global_dim,
               Errc::kDimensionMismatch, "global descriptor dim mismatch");
    for (Eigen::Index c = 0; c < input.cols(); ++c)
      input.col(c).head(scr.arch.global_dim) = hyps[h].second;
    const Eigen::MatrixXd coords = predict_coordinates(scr, input);
    std::vector<Correspondence2D3D> corr;
    for (std::size_t c = 0; c < locals.size(); ++c)
      if (coords.col(c).allFinite()) corr.push_back({locals[c].keypoint, coords.col(c)});

    HypothesisDiagnostic d;
    d.hypothesis = static_cast<int>(h);
    d.source_image = hyps[h].first;
    std::optional<LocalizationResult> r;
    if (corr.size() >= 4) r = solve_pnp_ransac(corr, intrinsics, cfg);
    if (r) {
      d.found = true;
      d.inliers = r->inliers;
      d.mean_residual = r->mean_inlier_residual;
      r->hypothesis = static_cast<int>(h);
      if (!best || r->inliers > best->inliers ||
          (r->inliers == best->inliers &&
           r->mean_inlier_residual < best->mean_inlier_residual))
        best = std::move(r);
    }
    diags.push_back(d);
  }
  if (diagnostics_out) *diagnostics_out = diags;
  if (best) best->diagnostics = std::move(diags);
  return best;
}

}  // namespace scrk
