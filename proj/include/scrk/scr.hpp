#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "scrk/common.hpp"
#include "scrk/covis.hpp"
#include "scrk/error.hpp"
#include "scrk/geometry.hpp"
#include "scrk/numeric.hpp"
#include "scrk/rng.hpp"

namespace scrk {

struct LocalDescriptor {
  ImageId image_id = 0;
  Keypoint keypoint = Keypoint::Zero();
  Eigen::VectorXd values;
};

struct ScrArchitecture {
  int global_dim = 256;
  int local_dim = 128;
  int width = 512;
  int blocks = 3;
  bool zero_global = false;

  int input_dim() const { return global_dim + local_dim; }
  bool operator==(const ScrArchitecture&) const = default;
};

struct ResidualBlock {
  Eigen::MatrixXd w1, w2;  // width x width
  Eigen::VectorXd b1, b2;
};

// Fully-connected regressor: input layer, residual blocks
// h <- h + W2 relu(W1 h + b1) + b2, ReLU, linear head to 3 outputs, then
// de-normalization x = center + scale * y.
struct ScrModel {
  ScrArchitecture arch;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  double scale = 1.0;
  PcaModel local_pca;  // raw local descriptor -> local_dim

  Eigen::MatrixXd w_in;  // width x input_dim
  Eigen::VectorXd b_in;
  std::vector<ResidualBlock> blocks;
  Eigen::MatrixXd w_out;  // 3 x width
  Eigen::VectorXd b_out;

  ScrModel() = default;
  explicit ScrModel(const ScrArchitecture& a) : arch(a) {
    w_in = Eigen::MatrixXd::Zero(a.width, a.input_dim());
    b_in = Eigen::VectorXd::Zero(a.width);
    blocks.resize(a.blocks);
    for (auto& blk : blocks) {
      blk.w1 = Eigen::MatrixXd::Zero(a.width, a.width);
      blk.w2 = Eigen::MatrixXd::Zero(a.width, a.width);
      blk.b1 = Eigen::VectorXd::Zero(a.width);
      blk.b2 = Eigen::VectorXd::Zero(a.width);
    }
    w_out = Eigen::MatrixXd::Zero(3, a.width);
    b_out = Eigen::VectorXd::Zero(3);
  }

  template <typename F>
  void for_each_param(F&& f) {
    f(w_in);
    f(b_in);
    for (auto& blk : blocks) {
      f(blk.w1);
      f(blk.b1);
      f(blk.w2);
      f(blk.b2);
    }
    f(w_out);
    f(b_out);
  }
  template <typename F>
  void for_each_param(F&& f) const {
    const_cast<ScrModel*>(this)->for_each_param(
        [&](auto& m) { f(static_cast<const decltype(m)&>(m)); });
  }

  Eigen::Index num_params() const {
    Eigen::Index n = 0;
    for_each_param([&](const auto& m) { n += m.size(); });
    return n;
  }

  Eigen::VectorXd flatten() const {
    Eigen::VectorXd out(num_params());
    Eigen::Index o = 0;
    for_each_param([&](const auto& m) {
      out.segment(o, m.size()) =
          Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
      o += m.size();
    });
    return out;
  }

  void unflatten(const Eigen::VectorXd& v) {
    SCRK_CHECK(v.size() == num_params(), Errc::kDimensionMismatch,
               "scr parameter vector size mismatch");
    Eigen::Index o = 0;
    for_each_param([&](auto& m) {
      Eigen::Map<Eigen::VectorXd>(m.data(), m.size()) = v.segment(o, m.size());
      o += m.size();
    });
  }

  bool operator==(const ScrModel& o) const {
    return arch == o.arch && center == o.center && scale == o.scale &&
           local_pca == o.local_pca && flatten() == o.flatten();
  }
};

inline ScrModel init_scr_model(const ScrArchitecture& arch, RngStream rng) {
  SCRK_CHECK(arch.width >= 1 && arch.blocks >= 0 && arch.input_dim() >= 1,
             Errc::kInvalidArgument, "invalid scr architecture");
  ScrModel m(arch);
  auto fill = [&](auto& mat, int fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Eigen::Index i = 0; i < mat.size(); ++i)
      mat.data()[i] = rng.uniform(-bound, bound);
  };
  fill(m.w_in, arch.input_dim());
  fill(m.b_in, arch.input_dim());
  for (auto& blk : m.blocks) {
    fill(blk.w1, arch.width);
    fill(blk.b1, arch.width);
    fill(blk.w2, arch.width);
    fill(blk.b2, arch.width);
  }
  // Zero head: every prediction starts at the scene center.
  return m;
}

namespace detail {

struct ScrForward {
  Eigen::MatrixXd input;
  Eigen::MatrixXd z0;
  std::vector<Eigen::MatrixXd> h;  // blocks + 1 entries
  std::vector<Eigen::MatrixXd> a;  // pre-activation inside each block
  Eigen::MatrixXd head_in;         // relu(h.back())
  Eigen::MatrixXd coords;          // 3 x B, de-normalized
};

inline Eigen::MatrixXd relu(const Eigen::MatrixXd& m) {
  return m.cwiseMax(0.0);
}

inline ScrForward scr_forward(const ScrModel& model, Eigen::MatrixXd input) {
  SCRK_CHECK(input.rows() == model.arch.input_dim(), Errc::kDimensionMismatch,
             "scr input dim " + std::to_string(input.rows()) + ", expected " +
                 std::to_string(model.arch.input_dim()));
  if (model.arch.zero_global) input.topRows(model.arch.global_dim).setZero();
  ScrForward f;
  f.input = std::move(input);
  f.z0.noalias() = model.w_in * f.input;
  f.z0.colwise() += model.b_in;
  f.h.push_back(relu(f.z0));
  for (const auto& blk : model.blocks) {
    Eigen::MatrixXd a = blk.w1 * f.h.back();
    a.colwise() += blk.b1;
    Eigen::MatrixXd next = f.h.back();
    next.noalias() += blk.w2 * relu(a);
    next.colwise() += blk.b2;
    f.a.push_back(std::move(a));
    f.h.push_back(std::move(next));
  }
  f.head_in = relu(f.h.back());
  Eigen::MatrixXd y = model.w_out * f.head_in;
  y.colwise() += model.b_out;
  f.coords = (model.scale * y).colwise() + model.center;
  return f;
}

inline Eigen::MatrixXd relu_mask(const Eigen::MatrixXd& pre,
                                 const Eigen::MatrixXd& grad) {
  return (pre.array() > 0.0).select(grad, 0.0);
}

// Gradient of sum over columns of L w.r.t. parameters, given dL/dcoords.
inline Eigen::VectorXd scr_backward(const ScrModel& model, const ScrForward& f,
                                    const Eigen::MatrixXd& grad_coords) {
  ScrModel g(model.arch);
  const Eigen::MatrixXd gy = model.scale * grad_coords;
  g.w_out.noalias() = gy * f.head_in.transpose();
  g.b_out = gy.rowwise().sum();
  Eigen::MatrixXd gh = relu_mask(f.h.back(), model.w_out.transpose() * gy);
  for (int k = static_cast<int>(model.blocks.size()) - 1; k >= 0; --k) {
    const auto& blk = model.blocks[k];
    auto& gblk = g.blocks[k];
    const Eigen::MatrixXd r = relu(f.a[k]);
    gblk.w2.noalias() = gh * r.transpose();
    gblk.b2 = gh.rowwise().sum();
    const Eigen::MatrixXd ga = relu_mask(f.a[k], blk.w2.transpose() * gh);
    gblk.w1.noalias() = ga * f.h[k].transpose();
    gblk.b1 = ga.rowwise().sum();
    gh.noalias() += blk.w1.transpose() * ga;
  }
  const Eigen::MatrixXd gz0 = relu_mask(f.z0, gh);
  g.w_in.noalias() = gz0 * f.input.transpose();
  g.b_in = gz0.rowwise().sum();
  return g.flatten();
}

}  // namespace detail

inline Eigen::VectorXd scr_input(const Eigen::VectorXd& global_desc,
                                 const Eigen::VectorXd& local) {
  Eigen::VectorXd x(global_desc.size() + local.size());
  x << global_desc, local;
  return x;
}

// Batched prediction; inputs are columns of [global ; local].
inline Eigen::MatrixXd predict_coordinates(const ScrModel& model,
                                           const Eigen::MatrixXd& inputs) {
  return detail::scr_forward(model, inputs).coords;
}

inline SceneCoordinate predict_coordinate(const LocalDescriptor& local,
                                          const Eigen::VectorXd& global_desc,
                                          const ScrModel& model) {
  SCRK_CHECK(local.values.size() == model.arch.local_dim &&
                 global_desc.size() == model.arch.global_dim,
             Errc::kDimensionMismatch, "descriptor dims do not match model");
  return predict_coordinates(model, scr_input(global_desc, local.values)).col(0);
}

// Raw local descriptor -> compressed, f32-rounded model input.
inline Eigen::VectorXd compress_local(const ScrModel& model,
                                      const Eigen::VectorXd& raw) {
  Eigen::VectorXd v =
      model.local_pca.in_dim() == 0 ? raw : pca_apply(model.local_pca, raw);
  round_f32_inplace(v);
  return v;
}

// ---------------------------------------------------------------------------
// Robust reprojection objective

enum class Supervision { kReprojection, kCoordinates };
enum class BufferSampling { kRandom, kFocus };

struct RobustLossParams {
  double switch_threshold = 50.0;  // pixels
  double clamp_scale = 50.0;       // pixels
  double blend_band = 10.0;        // pixels past the switch over which terms blend
  double nominal_depth = 10.0;     // scene units, target when no ground truth
};

struct LossWithGradient {
  double loss = 0.0;
  Eigen::Vector3d gradient = Eigen::Vector3d::Zero();
};

// In front of the camera with residual r <= switch: clamp * tanh(r / clamp).
// Past switch + band, or behind the camera: Euclidean distance to the target
// (ground truth when given, else the ray point at nominal depth). Inside the
// band the two are blended with a smoothstep weight so the loss is continuous.
inline LossWithGradient robust_reproj_loss(
    const SceneCoordinate& pred, const Keypoint& kp, const Pose& pose,
    const CameraIntrinsics& k, const RobustLossParams& params,
    const std::optional<SceneCoordinate>& gt = std::nullopt) {
  auto distance_term = [&]() {
    const SceneCoordinate target =
        gt ? *gt : unproject(kp, params.nominal_depth, k, pose);
    LossWithGradient out;
    const Eigen::Vector3d diff = pred - target;
    out.loss = diff.norm();
    if (out.loss > 0.0) out.gradient = diff / out.loss;
    return out;
  };

  const Eigen::Vector3d pc = pose.world_to_camera(pred);
  if (!(pc.z() > kMinProjectionDepth)) return distance_term();

  const double iz = 1.0 / pc.z();
  const Eigen::Vector2d proj(k.fx * pc.x() * iz + k.cx, k.fy * pc.y() * iz + k.cy);
  const Eigen::Vector2d e = proj - kp;
  const double r = e.norm();
  const double band_end = params.switch_threshold + params.blend_band;
  if (r >= band_end) return distance_term();

  LossWithGradient reproj;
  const double th = std::tanh(r / params.clamp_scale);
  reproj.loss = params.clamp_scale * th;
  Eigen::Vector3d dr_dpred = Eigen::Vector3d::Zero();
  if (r > 0.0) {
    Eigen::Matrix<double, 2, 3> j;
    j << k.fx * iz, 0.0, -k.fx * pc.x() * iz * iz, 0.0, k.fy * iz,
        -k.fy * pc.y() * iz * iz;
    dr_dpred = pose.rotation() * (j.transpose() * (e / r));
    reproj.gradient = (1.0 - th * th) * dr_dpred;
  }
  if (r <= params.switch_threshold) return reproj;

  const double t = (r - params.switch_threshold) / params.blend_band;
  const double w = 1.0 - t * t * (3.0 - 2.0 * t);
  const double dw_dr = -6.0 * t * (1.0 - t) / params.blend_band;
  const LossWithGradient dist = distance_term();
  LossWithGradient out;
  out.loss = w * reproj.loss + (1.0 - w) * dist.loss;
  out.gradient = w * reproj.gradient + (1.0 - w) * dist.gradient +
                 dw_dr * (reproj.loss - dist.loss) * dr_dpred;
  return out;
}

// ---------------------------------------------------------------------------
// Training buffer

struct ScrObservation {
  ImageId image_id = 0;
  Keypoint keypoint = Keypoint::Zero();
  Eigen::VectorXd local;  // compressed local descriptor
  std::optional<SceneCoordinate> gt;
};

struct ScrDataset {
  std::vector<ScrObservation> observations;
  std::map<ImageId, Eigen::VectorXd> globals;  // per-image global descriptor
};

// Moves every `every`-th observation of each image (1-based position) into a
// held-out set. every = 0 holds out nothing.
inline std::pair<ScrDataset, ScrDataset> split_holdout(const ScrDataset& data, int every) {
  SCRK_CHECK(every >= 0, Errc::kInvalidArgument, "holdout period must be >= 0");
  std::pair<ScrDataset, ScrDataset> out;
  out.first.globals = out.second.globals = data.globals;
  std::map<ImageId, int> seen;
  for (const auto& o : data.observations) {
    const int pos = ++seen[o.image_id];
    (every > 0 && pos % every == 0 ? out.second : out.first).observations.push_back(o);
  }
  return out;
}

// Rows reference observations of the owned dataset.
struct TrainingBuffer {
  ScrDataset data;
  std::vector<std::uint32_t> rows;
  std::size_t capacity = 0;

  std::size_t size() const { return rows.size(); }
  const ScrObservation& row(std::size_t i) const {
    return data.observations[rows[i]];
  }
  const Eigen::VectorXd& global_of(const ScrObservation& o) const {
    return data.globals.at(o.image_id);
  }
};

struct ScrTrainConfig {
  int width = 512;
  int blocks = 3;
  std::size_t buffer_capacity = 1000000;
  int batch_size = 8192;
  int iterations = 2000;
  double lr_max = 1e-3;
  double lr_min = 1e-5;
  double warmup_fraction = 0.05;
  RobustLossParams robust;
  Supervision supervision = Supervision::kCoordinates;
  BufferSampling sampling = BufferSampling::kRandom;
  bool zero_global = false;
  int holdout_every = 0;  // see split_holdout
  // Gaussian input jitter (std per entry) applied to training rows only.
  double jitter_global = 0.0;
  double jitter_local = 0.0;
  AdamWParams adam{1e-3, 0.9, 0.999, 1e-8, 1e-2};
  std::uint64_t seed = 0;

  void validate() const {
    SCRK_CHECK(batch_size >= 1 &&
                   static_cast<std::size_t>(batch_size) <= buffer_capacity,
               Errc::kInvalidArgument, "batch size must be in [1, capacity]");
    SCRK_CHECK(robust.switch_threshold > 0.0 && robust.clamp_scale > 0.0 &&
                   robust.blend_band > 0.0 && robust.nominal_depth > 0.0,
               Errc::kInvalidArgument, "robust-loss thresholds must be > 0");
    SCRK_CHECK(jitter_global >= 0.0 && jitter_local >= 0.0, Errc::kInvalidArgument,
               "jitter must be >= 0");
    SCRK_CHECK(iterations >= 0 && lr_max > 0.0 && lr_min >= 0.0,
               Errc::kInvalidArgument, "invalid schedule");
  }

  double learning_rate(int it) const {
    const int warm = std::max(1, static_cast<int>(warmup_fraction * iterations));
    if (it < warm) return lr_max * static_cast<double>(it + 1) / warm;
    const double span = std::max(1, iterations - warm);
    const double t = static_cast<double>(it - warm) / span;
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * t));
  }
};

inline TrainingBuffer fill_buffer(ScrDataset dataset, std::size_t capacity,
                                  BufferSampling mode, RngStream rng) {
  SCRK_CHECK(!dataset.observations.empty(), Errc::kEmptyDataset,
             "no observations to sample");
  std::vector<std::uint32_t> pool;
  for (std::size_t i = 0; i < dataset.observations.size(); ++i) {
    if (mode == BufferSampling::kFocus && !dataset.observations[i].gt) continue;
    pool.push_back(static_cast<std::uint32_t>(i));
  }
  SCRK_CHECK(!pool.empty(), Errc::kFocusModeUnavailable,
             "focus sampling needs ground-truth coordinates");
  for (std::uint32_t idx : pool) {
    const auto id = dataset.observations[idx].image_id;
    SCRK_CHECK(dataset.globals.count(id), Errc::kMissingFeatures,
               "no global descriptor for image " + std::to_string(id));
  }
  TrainingBuffer buf;
  buf.capacity = capacity;
  buf.rows.reserve(capacity);
  for (std::size_t r = 0; r < capacity; ++r)
    buf.rows.push_back(pool[rng.uniform_index(pool.size())]);
  buf.data = std::move(dataset);
  return buf;
}

inline TrainingBuffer fill_buffer(ScrDataset dataset, const ScrTrainConfig& cfg,
                                  RngStream rng) {
  return fill_buffer(std::move(dataset), cfg.buffer_capacity, cfg.sampling, rng);
}

// ---------------------------------------------------------------------------
// Training

using CameraMap = std::map<ImageId, CameraEntry>;

struct BatchLoss {
  double loss = 0.0;
  Eigen::VectorXd gradient;
};

// Mean robust loss over the given buffer rows and its parameter gradient.
inline BatchLoss scr_batch_loss(const ScrModel& model, const TrainingBuffer& buf,
                                const std::vector<std::size_t>& rows,
                                const CameraMap& cameras,
                                const RobustLossParams& params,
                                Supervision supervision,
                                const Eigen::MatrixXd* jitter = nullptr) {
  const int in_dim = model.arch.input_dim();
  Eigen::MatrixXd input(in_dim, rows.size());
  for (std::size_t c = 0; c < rows.size(); ++c) {
    const auto& o = buf.row(rows[c]);
    input.col(c) << buf.global_of(o), o.local;
  }
  if (jitter) input += *jitter;
  const auto fwd = detail::scr_forward(model, std::move(input));
  Eigen::MatrixXd grad(3, rows.size());
  BatchLoss out;
  const double inv = 1.0 / static_cast<double>(rows.size());
  for (std::size_t c = 0; c < rows.size(); ++c) {
    const auto& o = buf.row(rows[c]);
    const auto& cam = cameras.at(o.image_id);
    const auto lg = robust_reproj_loss(
        fwd.coords.col(c), o.keypoint, cam.pose, cam.intrinsics, params,
        supervision == Supervision::kCoordinates ? o.gt : std::nullopt);
    out.loss += inv * lg.loss;
    grad.col(c) = inv * lg.gradient;
  }
  out.gradient = detail::scr_backward(model, fwd, grad);
  return out;
}

struct TrainedScr {
  ScrModel model;
  std::vector<double> loss_trace;
};

// Scene-extent normalization from the training cameras.
inline void set_normalization(ScrModel& model, const TrainingBuffer& buf,
                              const CameraMap& cameras, double min_scale) {
  std::vector<ImageId> ids;
  for (const auto& [id, _] : buf.data.globals)
    if (cameras.count(id)) ids.push_back(id);
  SCRK_CHECK(!ids.empty(), Errc::kIdMismatch, "no cameras for buffer images");
  Eigen::Vector3d c = Eigen::Vector3d::Zero();
  for (ImageId id : ids) c += cameras.at(id).pose.center();
  c /= static_cast<double>(ids.size());
  double ss = 0.0;
  for (ImageId id : ids) ss += (cameras.at(id).pose.center() - c).squaredNorm();
  const double rms = std::sqrt(ss / static_cast<double>(ids.size()));
  model.center = c.unaryExpr([](double x) { return round_f32(x); });
  model.scale = round_f32(std::max(rms, min_scale));
}

inline TrainedScr train_scr(const TrainingBuffer& buf, const CameraMap& cameras,
                            const ScrTrainConfig& cfg,
                            const PcaModel& local_pca = {}) {
  cfg.validate();
  SCRK_CHECK(buf.size() > 0, Errc::kEmptyDataset, "empty training buffer");
  for (const auto& o : buf.data.observations)
    SCRK_CHECK(cameras.count(o.image_id), Errc::kIdMismatch,
               "no pose for image " + std::to_string(o.image_id));

  ScrArchitecture arch;
  arch.global_dim = static_cast<int>(buf.global_of(buf.row(0)).size());
  arch.local_dim = static_cast<int>(buf.row(0).local.size());
  arch.width = cfg.width;
  arch.blocks = cfg.blocks;
  arch.zero_global = cfg.zero_global;

  const RngStream root(cfg.seed, "scr");
  TrainedScr out{init_scr_model(arch, root.child("init")), {}};
  out.model.local_pca = local_pca;
  set_normalization(out.model, buf, cameras, cfg.robust.nominal_depth);

  RngStream order_rng = root.child("order");
  std::vector<std::size_t> order(buf.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();
  const std::size_t batch =
      std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), buf.size());

  OptimizerState opt(cfg.adam, out.model.num_params());
  Eigen::VectorXd params = out.model.flatten();
  std::vector<std::size_t> rows(batch);
  RngStream jitter_rng = root.child("jitter");
  const bool use_jitter = cfg.jitter_global > 0.0 || cfg.jitter_local > 0.0;
  Eigen::MatrixXd jitter;
  for (int it = 0; it < cfg.iterations; ++it) {
    for (std::size_t b = 0; b < batch; ++b) {
      if (cursor == order.size()) {
        for (std::size_t i = order.size() - 1; i > 0; --i)
          std::swap(order[i], order[order_rng.uniform_index(i + 1)]);
        cursor = 0;
      }
      rows[b] = order[cursor++];
    }
    if (use_jitter) {
      jitter.resize(arch.input_dim(), static_cast<Eigen::Index>(batch));
      for (Eigen::Index c = 0; c < jitter.cols(); ++c)
        for (Eigen::Index r = 0; r < jitter.rows(); ++r)
          jitter(r, c) = jitter_rng.normal() *
                         (r < arch.global_dim ? cfg.jitter_global : cfg.jitter_local);
    }
    const auto bl = scr_batch_loss(out.model, buf, rows, cameras, cfg.robust,
                                   cfg.supervision, use_jitter ? &jitter : nullptr);
    SCRK_CHECK(std::isfinite(bl.loss), Errc::kNonFiniteLoss,
               "scr loss not finite at iteration " + std::to_string(it));
    out.loss_trace.push_back(bl.loss);
    opt.hyper.learning_rate = cfg.learning_rate(it);
    adamw_step(opt, params, bl.gradient);
    out.model.unflatten(params);
  }
  params = params.unaryExpr([](double x) { return round_f32(x); });
  out.model.unflatten(params);
  return out;
}

// Mean pixel residual of predictions (behind-camera predictions count as the
// given penalty).
inline double mean_reprojection_residual(const ScrModel& model,
                                         const ScrDataset& data,
                                         const CameraMap& cameras,
                                         double behind_penalty = 1e6) {
  SCRK_CHECK(!data.observations.empty(), Errc::kEmptyDataset, "no observations");
  Eigen::MatrixXd input(model.arch.input_dim(), data.observations.size());
  for (std::size_t c = 0; c < data.observations.size(); ++c) {
    const auto& o = data.observations[c];
    input.col(c) << data.globals.at(o.image_id), o.local;
  }
  const Eigen::MatrixXd coords = predict_coordinates(model, input);
  double total = 0.0;
  for (std::size_t c = 0; c < data.observations.size(); ++c) {
    const auto& o = data.observations[c];
    const auto& cam = cameras.at(o.image_id);
    const auto r = reprojection_residual(coords.col(c), o.keypoint, cam.pose,
                                         cam.intrinsics);
    total += r ? *r : behind_penalty;
  }
  return total / static_cast<double>(data.observations.size());
}

}  // namespace scrk
