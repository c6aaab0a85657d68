#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "scrk/common.hpp"
#include "scrk/error.hpp"
#include "scrk/rng.hpp"

namespace scrk {

// ---------------------------------------------------------------------------
// PCA

struct PcaModel {
  Eigen::VectorXd mean;
  Eigen::MatrixXd components;  // out_dim x in_dim, orthonormal rows

  int in_dim() const { return static_cast<int>(mean.size()); }
  int out_dim() const { return static_cast<int>(components.rows()); }

  bool operator==(const PcaModel& o) const {
    return mean.size() == o.mean.size() && mean == o.mean &&
           components.rows() == o.components.rows() &&
           components.cols() == o.components.cols() &&
           components == o.components;
  }
};

namespace detail {

inline void fix_component_signs(Eigen::MatrixXd& comps) {
  for (Eigen::Index r = 0; r < comps.rows(); ++r) {
    Eigen::Index arg = 0;
    comps.row(r).cwiseAbs().maxCoeff(&arg);
    if (comps(r, arg) < 0.0) comps.row(r) *= -1.0;
  }
}

// Re-orthonormalizes rows, preserving their span order.
inline void orthonormalize_rows(Eigen::MatrixXd& comps) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(comps.transpose());
  Eigen::MatrixXd q = qr.householderQ() *
                      Eigen::MatrixXd::Identity(comps.cols(), comps.rows());
  // Keep each row pointing the same way as before.
  for (Eigen::Index r = 0; r < comps.rows(); ++r) {
    if (q.col(r).dot(comps.row(r).transpose()) < 0.0) q.col(r) *= -1.0;
  }
  comps = q.transpose();
}

}  // namespace detail

// Top principal directions by eigendecomposition. When n < d the n x n Gram
// matrix is decomposed instead; it has the same non-zero spectrum.
inline PcaModel pca_fit(const Eigen::MatrixXd& data, int out_dim) {
  const Eigen::Index n = data.rows();
  const Eigen::Index d = data.cols();
  SCRK_CHECK(out_dim >= 1, Errc::kInvalidArgument, "out_dim must be >= 1");
  SCRK_CHECK(d >= out_dim, Errc::kDimensionMismatch,
             "out_dim exceeds data dimension");
  SCRK_CHECK(n >= out_dim, Errc::kInsufficientSamples,
             "need at least out_dim samples, got " + std::to_string(n));

  PcaModel model;
  model.mean = data.colwise().mean().transpose();
  const Eigen::MatrixXd centered = data.rowwise() - model.mean.transpose();

  Eigen::VectorXd evals;
  Eigen::MatrixXd comps(out_dim, d);
  const bool use_gram = n < d;
  if (use_gram) {
    const Eigen::MatrixXd gram = centered * centered.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    evals = es.eigenvalues();
    const double top = std::max(evals(n - 1), 0.0);
    SCRK_CHECK(top > 1e-300, Errc::kDegenerateData, "all rows identical");
    const double tol = top * 1e-12;
    int rank = 0;
    for (Eigen::Index i = 0; i < n; ++i) rank += evals(i) > tol ? 1 : 0;
    if (rank >= out_dim) {
      for (int c = 0; c < out_dim; ++c) {
        const Eigen::Index idx = n - 1 - c;
        Eigen::VectorXd dir = centered.transpose() * es.eigenvectors().col(idx);
        comps.row(c) = (dir / dir.norm()).transpose();
      }
    } else {
      // Rank-deficient: fall through to the covariance route to complete the
      // basis from the null space.
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> cs(
          centered.transpose() * centered);
      for (int c = 0; c < out_dim; ++c)
        comps.row(c) = cs.eigenvectors().col(d - 1 - c).transpose();
    }
  } else {
    const Eigen::MatrixXd cov = centered.transpose() * centered;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    evals = es.eigenvalues();
    SCRK_CHECK(evals(d - 1) > 1e-300, Errc::kDegenerateData,
               "all rows identical");
    for (int c = 0; c < out_dim; ++c)
      comps.row(c) = es.eigenvectors().col(d - 1 - c).transpose();
  }
  detail::orthonormalize_rows(comps);
  detail::fix_component_signs(comps);
  model.components = std::move(comps);
  return model;
}

inline Eigen::VectorXd pca_apply(const PcaModel& model,
                                 const Eigen::VectorXd& v) {
  SCRK_CHECK(v.size() == model.in_dim(), Errc::kDimensionMismatch,
             "pca input has dim " + std::to_string(v.size()) + ", expected " +
                 std::to_string(model.in_dim()));
  return model.components * (v - model.mean);
}

// Row-wise application to an n x in_dim matrix.
inline Eigen::MatrixXd pca_apply_rows(const PcaModel& model,
                                      const Eigen::MatrixXd& rows) {
  SCRK_CHECK(rows.cols() == model.in_dim(), Errc::kDimensionMismatch,
             "pca input dimension mismatch");
  return (rows.rowwise() - model.mean.transpose()) *
         model.components.transpose();
}

inline void round_f32_inplace(PcaModel& model) {
  round_f32_inplace(model.mean);
  round_f32_inplace(model.components);
}

// ---------------------------------------------------------------------------
// AdamW

struct AdamWParams {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-2;
};

struct OptimizerState {
  AdamWParams hyper;
  long long step = 0;
  Eigen::VectorXd first_moment;
  Eigen::VectorXd second_moment;

  OptimizerState() = default;
  OptimizerState(const AdamWParams& p, Eigen::Index size)
      : hyper(p),
        first_moment(Eigen::VectorXd::Zero(size)),
        second_moment(Eigen::VectorXd::Zero(size)) {}
};

// Decoupled weight decay, bias-corrected moments.
inline void adamw_step(OptimizerState& state, Eigen::VectorXd& params,
                       const Eigen::VectorXd& grads) {
  SCRK_CHECK(params.size() == grads.size() &&
                 params.size() == state.first_moment.size() &&
                 params.size() == state.second_moment.size(),
             Errc::kDimensionMismatch, "adamw shape mismatch");
  SCRK_CHECK(grads.allFinite(), Errc::kNonFiniteGradient,
             "non-finite gradient at step " + std::to_string(state.step + 1));
  const AdamWParams& h = state.hyper;
  ++state.step;
  state.first_moment = h.beta1 * state.first_moment + (1.0 - h.beta1) * grads;
  state.second_moment = h.beta2 * state.second_moment +
                        (1.0 - h.beta2) * grads.cwiseProduct(grads);
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  params *= (1.0 - h.learning_rate * h.weight_decay);
  params.array() -= h.learning_rate * (state.first_moment.array() / c1) /
                    ((state.second_moment.array() / c2).sqrt() + h.epsilon);
}

// ---------------------------------------------------------------------------
// k-means

struct KMeansResult {
  Eigen::MatrixXd centroids;          // k x d
  std::vector<int> assignment;        // per row
  std::vector<double> distortion;     // total squared error after each assignment
};

namespace detail {

inline double assign_points(const Eigen::MatrixXd& data,
                            const Eigen::MatrixXd& centroids,
                            std::vector<int>& assignment) {
  double total = 0.0;
  assignment.resize(data.rows());
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int best_c = 0;
    for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
      const double dist = (data.row(i) - centroids.row(c)).squaredNorm();
      if (dist < best) {
        best = dist;
        best_c = static_cast<int>(c);
      }
    }
    assignment[i] = best_c;
    total += best;
  }
  return total;
}

}  // namespace detail

// k-means++ seeding followed by Lloyd iterations. Empty clusters keep their
// previous centroid, so distortion never increases.
inline KMeansResult kmeans(const Eigen::MatrixXd& data, int k, int iters,
                           RngStream rng) {
  const Eigen::Index n = data.rows();
  SCRK_CHECK(n > 0 && k >= 1, Errc::kEmptyInput, "kmeans on empty input");
  SCRK_CHECK(n >= k, Errc::kInvalidArgument, "kmeans needs n >= k");

  KMeansResult res;
  res.centroids.resize(k, data.cols());
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::vector<char> taken(n, 0);
  Eigen::Index first = static_cast<Eigen::Index>(rng.uniform_index(n));
  res.centroids.row(0) = data.row(first);
  taken[first] = 1;
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], (data.row(i) - res.centroids.row(c - 1)).squaredNorm());
      total += d2[i];
    }
    Eigen::Index pick = -1;
    if (total > 0.0) {
      double r = rng.uniform() * total;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        pick = i;
        r -= d2[i];
        if (r < 0.0) break;
      }
    }
    if (pick < 0) {
      // All remaining points coincide with chosen centroids.
      std::vector<Eigen::Index> free;
      for (Eigen::Index i = 0; i < n; ++i)
        if (!taken[i]) free.push_back(i);
      pick = free[rng.uniform_index(free.size())];
    }
    taken[pick] = 1;
    res.centroids.row(c) = data.row(pick);
  }

  for (int it = 0; it <= iters; ++it) {
    res.distortion.push_back(
        detail::assign_points(data, res.centroids, res.assignment));
    if (it == iters) break;
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, data.cols());
    std::vector<int> counts(k, 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(res.assignment[i]) += data.row(i);
      ++counts[res.assignment[i]];
    }
    for (int c = 0; c < k; ++c)
      if (counts[c] > 0) res.centroids.row(c) = sums.row(c) / counts[c];
  }
  return res;
}

}  // namespace scrk
