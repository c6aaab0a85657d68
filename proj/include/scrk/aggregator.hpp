#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "scrk/common.hpp"
#include "scrk/covis.hpp"
#include "scrk/error.hpp"
#include "scrk/numeric.hpp"
#include "scrk/rng.hpp"

namespace scrk {

struct VisualFeatureMap {
  ImageId image_id = 0;
  Eigen::MatrixXd tokens;  // T x feat_dim
};

// Source of dense per-image features (synthetic generator or a file loaded
// from an external backbone).
class FeatureProvider {
 public:
  virtual ~FeatureProvider() = default;
  virtual const VisualFeatureMap* find(ImageId id) const = 0;
  virtual std::vector<ImageId> ids() const = 0;

  const VisualFeatureMap& at(ImageId id) const {
    const auto* f = find(id);
    SCRK_CHECK(f != nullptr, Errc::kMissingFeatures,
               "no visual features for image " + std::to_string(id));
    return *f;
  }
};

class FeatureStore : public FeatureProvider {
 public:
  void add(VisualFeatureMap f) {
    const ImageId id = f.image_id;
    maps_[id] = std::move(f);
  }
  const VisualFeatureMap* find(ImageId id) const override {
    auto it = maps_.find(id);
    return it == maps_.end() ? nullptr : &it->second;
  }
  std::vector<ImageId> ids() const override {
    std::vector<ImageId> out;
    for (const auto& [id, _] : maps_) out.push_back(id);
    return out;
  }
  std::size_t size() const { return maps_.size(); }

 private:
  std::map<ImageId, VisualFeatureMap> maps_;
};

struct AggregatorDims {
  int feat_dim = 768;
  int proj_dim = 128;
  int clusters = 18;

  int intermediate_dim() const { return proj_dim * clusters; }
  bool operator==(const AggregatorDims&) const = default;
};

struct AggregatorModel {
  AggregatorDims dims;
  Eigen::MatrixXd proj_weight;   // feat_dim x proj_dim
  Eigen::VectorXd proj_bias;     // proj_dim
  Eigen::MatrixXd score_weight;  // feat_dim x clusters
  Eigen::VectorXd score_bias;    // clusters

  explicit AggregatorModel(const AggregatorDims& d = {})
      : dims(d),
        proj_weight(Eigen::MatrixXd::Zero(d.feat_dim, d.proj_dim)),
        proj_bias(Eigen::VectorXd::Zero(d.proj_dim)),
        score_weight(Eigen::MatrixXd::Zero(d.feat_dim, d.clusters)),
        score_bias(Eigen::VectorXd::Zero(d.clusters)) {}

  Eigen::Index num_params() const {
    return proj_weight.size() + proj_bias.size() + score_weight.size() +
           score_bias.size();
  }

  // Declared order: proj_weight, proj_bias, score_weight, score_bias
  // (matrices column-major).
  Eigen::VectorXd flatten() const {
    Eigen::VectorXd out(num_params());
    Eigen::Index o = 0;
    auto put = [&](const auto& m) {
      out.segment(o, m.size()) =
          Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
      o += m.size();
    };
    put(proj_weight);
    put(proj_bias);
    put(score_weight);
    put(score_bias);
    return out;
  }

  void unflatten(const Eigen::VectorXd& v) {
    SCRK_CHECK(v.size() == num_params(), Errc::kDimensionMismatch,
               "aggregator parameter vector size mismatch");
    Eigen::Index o = 0;
    auto get = [&](auto& m) {
      Eigen::Map<Eigen::VectorXd>(m.data(), m.size()) = v.segment(o, m.size());
      o += m.size();
    };
    get(proj_weight);
    get(proj_bias);
    get(score_weight);
    get(score_bias);
  }

  bool operator==(const AggregatorModel& o) const {
    return dims == o.dims && proj_weight == o.proj_weight &&
           proj_bias == o.proj_bias && score_weight == o.score_weight &&
           score_bias == o.score_bias;
  }
};

inline AggregatorModel init_aggregator(const AggregatorDims& dims,
                                       RngStream rng) {
  AggregatorModel m(dims);
  const double bound = 1.0 / std::sqrt(static_cast<double>(dims.feat_dim));
  auto fill = [&](auto& mat) {
    for (Eigen::Index i = 0; i < mat.size(); ++i)
      mat.data()[i] = rng.uniform(-bound, bound);
  };
  fill(m.proj_weight);
  fill(m.proj_bias);
  fill(m.score_weight);
  fill(m.score_bias);
  return m;
}

struct GlobalDescriptor {
  ImageId image_id = 0;
  Eigen::VectorXd values;
};

namespace detail {

// Intermediate quantities of one forward pass, kept for backpropagation.
struct AggregateForward {
  Eigen::MatrixXd projected;  // T x proj_dim
  Eigen::MatrixXd attention;  // T x clusters, columns sum to 1
  Eigen::VectorXd output;     // clusters * proj_dim
};

inline AggregateForward aggregate_forward(const Eigen::MatrixXd& tokens,
                                          const AggregatorModel& model) {
  SCRK_CHECK(tokens.cols() == model.dims.feat_dim && tokens.rows() >= 1,
             Errc::kDimensionMismatch,
             "feature dim " + std::to_string(tokens.cols()) + " vs model " +
                 std::to_string(model.dims.feat_dim));
  AggregateForward f;
  f.projected.noalias() = tokens * model.proj_weight;
  f.projected.rowwise() += model.proj_bias.transpose();
  Eigen::MatrixXd scores = tokens * model.score_weight;
  scores.rowwise() += model.score_bias.transpose();
  // Soft-normalization over token positions, per cluster.
  f.attention.resize(scores.rows(), scores.cols());
  for (Eigen::Index c = 0; c < scores.cols(); ++c) {
    const double mx = scores.col(c).maxCoeff();
    f.attention.col(c) = (scores.col(c).array() - mx).exp().matrix();
    f.attention.col(c) /= f.attention.col(c).sum();
  }
  // Cluster c block = sum_t A[t,c] * P[t,:]
  const Eigen::MatrixXd blocks = f.attention.transpose() * f.projected;  // C x dp
  f.output.resize(blocks.size());
  const Eigen::Index dp = blocks.cols();
  for (Eigen::Index c = 0; c < blocks.rows(); ++c)
    f.output.segment(c * dp, dp) = blocks.row(c).transpose();
  return f;
}

}  // namespace detail

// Intermediate (pre-PCA) descriptor of size clusters * proj_dim.
inline Eigen::VectorXd aggregate(const VisualFeatureMap& features,
                                 const AggregatorModel& model) {
  return detail::aggregate_forward(features.tokens, model).output;
}

inline GlobalDescriptor global_descriptor(const VisualFeatureMap& features,
                                          const AggregatorModel& model,
                                          const PcaModel& pca) {
  SCRK_CHECK(pca.in_dim() == model.dims.intermediate_dim(),
             Errc::kDimensionMismatch, "pca input dim does not match aggregator");
  Eigen::VectorXd v = pca_apply(pca, aggregate(features, model));
  const double n = v.norm();
  SCRK_CHECK(n >= 1e-12, Errc::kDegenerateDescriptor,
             "descriptor of image " + std::to_string(features.image_id) +
                 " vanishes after PCA");
  v /= n;
  round_f32_inplace(v);
  return {features.image_id, std::move(v)};
}

inline double cosine_similarity(const Eigen::VectorXd& a,
                                 const Eigen::VectorXd& b) {
  return a.dot(b) / (a.norm() * b.norm());
}

// psi * (1 - s)^2 + (1 - psi) * max(tau + s, 0)^2 with s the cosine similarity.
inline double mgcl_loss(const Eigen::VectorXd& g_i, const Eigen::VectorXd& g_j,
                        double psi, double tau) {
  const double s = g_i.dot(g_j);
  const double pos = 1.0 - s;
  const double neg = std::max(tau + s, 0.0);
  return psi * pos * pos + (1.0 - psi) * neg * neg;
}

inline double mgcl_loss_ds(double s, double psi, double tau) {
  return -2.0 * psi * (1.0 - s) + 2.0 * (1.0 - psi) * std::max(tau + s, 0.0);
}

struct PairSample {
  ImageId i = 0;
  ImageId j = 0;
  double psi = 0.0;

  bool operator==(const PairSample&) const = default;
};

struct BatchPlan {
  std::vector<PairSample> positives;
  std::vector<PairSample> soft_negatives;
  std::vector<PairSample> randoms;

  std::vector<PairSample> all() const {
    std::vector<PairSample> out = positives;
    out.insert(out.end(), soft_negatives.begin(), soft_negatives.end());
    out.insert(out.end(), randoms.begin(), randoms.end());
    return out;
  }
};

struct LossAndGradient {
  double loss = 0.0;
  Eigen::VectorXd gradient;  // same layout as AggregatorModel::flatten()
};

// Mean mGCL over all pairs of the batch on L2-normalized intermediate
// descriptors, with the gradient over every aggregator parameter.
inline LossAndGradient mgcl_batch_gradient(const BatchPlan& batch,
                                           const FeatureProvider& features,
                                           const AggregatorModel& model,
                                           double tau) {
  const auto pairs = batch.all();
  SCRK_CHECK(!pairs.empty(), Errc::kEmptyInput, "empty batch");

  struct ImageState {
    detail::AggregateForward fwd;
    const Eigen::MatrixXd* tokens = nullptr;
    Eigen::VectorXd unit;
    double norm = 0.0;
    Eigen::VectorXd grad_unit;
  };
  std::map<ImageId, ImageState> states;
  for (const auto& p : pairs) {
    for (ImageId id : {p.i, p.j}) {
      if (states.count(id)) continue;
      const auto& f = features.at(id);
      ImageState st;
      st.tokens = &f.tokens;
      st.fwd = detail::aggregate_forward(f.tokens, model);
      st.norm = st.fwd.output.norm();
      SCRK_CHECK(st.norm > 0.0, Errc::kDegenerateDescriptor,
                 "zero intermediate descriptor for image " + std::to_string(id));
      st.unit = st.fwd.output / st.norm;
      st.grad_unit = Eigen::VectorXd::Zero(st.unit.size());
      states.emplace(id, std::move(st));
    }
  }

  const double inv_count = 1.0 / static_cast<double>(pairs.size());
  LossAndGradient out;
  for (const auto& p : pairs) {
    auto& a = states.at(p.i);
    auto& b = states.at(p.j);
    const double s = a.unit.dot(b.unit);
    out.loss += inv_count * mgcl_loss(a.unit, b.unit, p.psi, tau);
    const double ds = inv_count * mgcl_loss_ds(s, p.psi, tau);
    a.grad_unit += ds * b.unit;
    b.grad_unit += ds * a.unit;
  }

  const auto& d = model.dims;
  Eigen::MatrixXd g_pw = Eigen::MatrixXd::Zero(d.feat_dim, d.proj_dim);
  Eigen::VectorXd g_pb = Eigen::VectorXd::Zero(d.proj_dim);
  Eigen::MatrixXd g_sw = Eigen::MatrixXd::Zero(d.feat_dim, d.clusters);
  Eigen::VectorXd g_sb = Eigen::VectorXd::Zero(d.clusters);
  for (auto& [id, st] : states) {
    // Through normalization.
    const Eigen::VectorXd gv =
        (st.grad_unit - st.unit * st.unit.dot(st.grad_unit)) / st.norm;
    Eigen::MatrixXd g_blocks(d.clusters, d.proj_dim);
    for (int c = 0; c < d.clusters; ++c)
      g_blocks.row(c) = gv.segment(c * d.proj_dim, d.proj_dim).transpose();
    const Eigen::MatrixXd& att = st.fwd.attention;
    const Eigen::MatrixXd g_proj = att * g_blocks;                         // T x dp
    const Eigen::MatrixXd g_att = st.fwd.projected * g_blocks.transpose();  // T x C
    Eigen::MatrixXd g_scores(att.rows(), att.cols());
    for (Eigen::Index c = 0; c < att.cols(); ++c) {
      const double inner = att.col(c).dot(g_att.col(c));
      g_scores.col(c) =
          att.col(c).cwiseProduct((g_att.col(c).array() - inner).matrix());
    }
    g_pw.noalias() += st.tokens->transpose() * g_proj;
    g_pb += g_proj.colwise().sum().transpose();
    g_sw.noalias() += st.tokens->transpose() * g_scores;
    g_sb += g_scores.colwise().sum().transpose();
  }

  AggregatorModel grad(d);
  grad.proj_weight = std::move(g_pw);
  grad.proj_bias = std::move(g_pb);
  grad.score_weight = std::move(g_sw);
  grad.score_bias = std::move(g_sb);
  out.gradient = grad.flatten();
  return out;
}

// ---------------------------------------------------------------------------
// Batch mining

struct BandThresholds {
  double positive = 0.5;   // psi > positive
  double soft_low = 0.25;  // soft_low <= psi <= soft_high
  double soft_high = 0.5;
};

enum class Band { kPositive, kSoft, kRandom };

inline const char* band_name(Band b) {
  switch (b) {
    case Band::kPositive: return "positive";
    case Band::kSoft: return "soft";
    case Band::kRandom: return "random";
  }
  return "?";
}

class BatchMiner {
 public:
  explicit BatchMiner(const CovisGraph& graph, const BandThresholds& bands = {}) {
    SCRK_CHECK(bands.soft_low >= 0.0 && bands.soft_low < bands.soft_high &&
                   bands.soft_high <= 1.0,
               Errc::kInvalidArgument, "invalid band thresholds");
    for (const auto& e : graph.edges()) {
      if (e.psi > bands.positive) {
        positives_.push_back({e.i, e.j, e.psi});
      } else if (e.psi >= bands.soft_low && e.psi <= bands.soft_high) {
        soft_.push_back({e.i, e.j, e.psi});
      }
    }
    for (const auto& [i, j] : non_adjacent_pairs(graph))
      randoms_.push_back({i, j, 0.0});
  }

  std::size_t band_size(Band b) const { return list(b).size(); }

  BatchPlan mine(std::size_t b, RngStream& rng) const {
    SCRK_CHECK(b >= 1, Errc::kInvalidArgument, "band size must be >= 1");
    BatchPlan plan;
    plan.positives = draw(Band::kPositive, b, rng);
    plan.soft_negatives = draw(Band::kSoft, b, rng);
    plan.randoms = draw(Band::kRandom, b, rng);
    return plan;
  }

 private:
  const std::vector<PairSample>& list(Band b) const {
    switch (b) {
      case Band::kPositive: return positives_;
      case Band::kSoft: return soft_;
      default: return randoms_;
    }
  }

  std::vector<PairSample> draw(Band band, std::size_t b, RngStream& rng) const {
    const auto& src = list(band);
    SCRK_CHECK(src.size() >= b, Errc::kBandUnderflow,
               std::string(band_name(band)) + " band has " +
                   std::to_string(src.size()) + " pairs, need " +
                   std::to_string(b));
    std::vector<PairSample> out;
    out.reserve(b);
    for (std::size_t idx : sample_without_replacement(src.size(), b, rng))
      out.push_back(src[idx]);
    return out;
  }

  std::vector<PairSample> positives_;
  std::vector<PairSample> soft_;
  std::vector<PairSample> randoms_;
};

inline BatchPlan mine_batch(const CovisGraph& graph, std::size_t b,
                            RngStream& rng, const BandThresholds& bands = {}) {
  return BatchMiner(graph, bands).mine(b, rng);
}

// ---------------------------------------------------------------------------
// Training

struct AggTrainConfig {
  AggregatorDims dims;
  int global_dim = 256;
  int iterations = 10000;
  int band_size = 21;
  double margin = 0.5;
  BandThresholds bands;
  AdamWParams adam{3e-3, 0.9, 0.999, 1e-8, 1e-2};
  std::uint64_t seed = 0;

  void validate() const {
    SCRK_CHECK(margin > 0.0 && margin <= 1.0, Errc::kInvalidArgument,
               "margin must be in (0,1]");
    SCRK_CHECK(band_size >= 1 && iterations >= 0, Errc::kInvalidArgument,
               "band_size >= 1 and iterations >= 0 required");
    SCRK_CHECK(global_dim >= 1 && global_dim <= dims.intermediate_dim(),
               Errc::kInvalidArgument, "global_dim out of range");
  }
};

struct TrainedAggregator {
  AggregatorModel model;
  PcaModel pca;
  std::vector<double> loss_trace;
};

inline Eigen::MatrixXd intermediate_descriptors(const FeatureProvider& features,
                                                const std::vector<ImageId>& ids,
                                                const AggregatorModel& model) {
  Eigen::MatrixXd rows(ids.size(), model.dims.intermediate_dim());
  for (std::size_t r = 0; r < ids.size(); ++r)
    rows.row(r) = aggregate(features.at(ids[r]), model).transpose();
  return rows;
}

// Training loop: mine -> mGCL gradient -> AdamW; PCA fitted afterwards on the
// intermediate descriptors of every graph node.
inline TrainedAggregator train_aggregator(const FeatureProvider& features,
                                          const CovisGraph& graph,
                                          const AggTrainConfig& cfg) {
  cfg.validate();
  const RngStream root(cfg.seed, "aggregator");
  TrainedAggregator out{init_aggregator(cfg.dims, root.child("init")), {}, {}};
  const BatchMiner miner(graph, cfg.bands);
  RngStream batch_rng = root.child("batches");
  OptimizerState opt(cfg.adam, out.model.num_params());
  Eigen::VectorXd params = out.model.flatten();
  out.loss_trace.reserve(cfg.iterations);
  for (int it = 0; it < cfg.iterations; ++it) {
    const BatchPlan plan = miner.mine(cfg.band_size, batch_rng);
    const auto lg = mgcl_batch_gradient(plan, features, out.model, cfg.margin);
    SCRK_CHECK(std::isfinite(lg.loss), Errc::kNonFiniteLoss,
               "aggregator loss not finite at iteration " + std::to_string(it));
    out.loss_trace.push_back(lg.loss);
    adamw_step(opt, params, lg.gradient);
    out.model.unflatten(params);
  }
  params = params.unaryExpr([](double x) { return round_f32(x); });
  out.model.unflatten(params);

  const Eigen::MatrixXd inter =
      intermediate_descriptors(features, graph.nodes(), out.model);
  out.pca = pca_fit(inter, cfg.global_dim);
  round_f32_inplace(out.pca);
  return out;
}

}  // namespace scrk
