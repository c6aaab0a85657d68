#include <gtest/gtest.h>

#include <cmath>

#include "scrk/scr.hpp"

using namespace scrk;

namespace {

CameraIntrinsics cam() { return {100.0, 100.0, 50.0, 50.0, 100, 100}; }

ScrArchitecture tiny_arch() {
  ScrArchitecture a;
  a.global_dim = 2;
  a.local_dim = 4;
  a.width = 8;
  a.blocks = 1;
  return a;
}

ScrModel randomized(const ScrArchitecture& arch, std::uint64_t seed) {
  ScrModel m = init_scr_model(arch, RngStream(seed, "init"));
  RngStream rng(seed, "head");
  for (Eigen::Index i = 0; i < m.w_out.size(); ++i) m.w_out.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < m.b_out.size(); ++i) m.b_out.data()[i] = rng.normal();
  m.center = Eigen::Vector3d(0.5, -0.2, 6.0);
  m.scale = 1.7;
  return m;
}

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, RngStream& rng) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

RobustLossParams small_switch() { return {5.0, 5.0, 2.0, 10.0}; }

}  // namespace

TEST(Predict, ZeroHeadGivesCenter) {
  ScrModel m = init_scr_model(tiny_arch(), RngStream(1, "i"));
  m.center = Eigen::Vector3d(1, 2, 3);
  RngStream rng(1, "x");
  const Eigen::MatrixXd out = predict_coordinates(m, random_matrix(6, 7, rng));
  for (Eigen::Index c = 0; c < 7; ++c) EXPECT_EQ(out.col(c), m.center);
}

TEST(Predict, MatchesLoopReimplementation) {
  const ScrModel m = randomized(tiny_arch(), 2);
  RngStream rng(2, "x");
  const Eigen::VectorXd x = random_matrix(6, 1, rng).col(0);
  auto relu = [](double v) { return v > 0 ? v : 0.0; };
  std::vector<double> h(8);
  for (int o = 0; o < 8; ++o) {
    double s = m.b_in(o);
    for (int i = 0; i < 6; ++i) s += m.w_in(o, i) * x(i);
    h[o] = relu(s);
  }
  const auto& blk = m.blocks[0];
  std::vector<double> a(8), next(8);
  for (int o = 0; o < 8; ++o) {
    double s = blk.b1(o);
    for (int i = 0; i < 8; ++i) s += blk.w1(o, i) * h[i];
    a[o] = relu(s);
  }
  for (int o = 0; o < 8; ++o) {
    double s = h[o] + blk.b2(o);
    for (int i = 0; i < 8; ++i) s += blk.w2(o, i) * a[i];
    next[o] = relu(s);
  }
  Eigen::Vector3d ref;
  for (int o = 0; o < 3; ++o) {
    double s = m.b_out(o);
    for (int i = 0; i < 8; ++i) s += m.w_out(o, i) * next[i];
    ref(o) = m.center(o) + m.scale * s;
  }
  const LocalDescriptor local{0, Keypoint::Zero(), x.tail(4)};
  const SceneCoordinate got = predict_coordinate(local, x.head(2), m);
  EXPECT_LT((got - ref).norm(), 1e-9);
  EXPECT_EQ(got, predict_coordinate(local, x.head(2), m));
}

TEST(Predict, ZeroGlobalIgnoresGlobalInput) {
  ScrArchitecture arch = tiny_arch();
  arch.zero_global = true;
  const ScrModel m = randomized(arch, 3);
  RngStream rng(3, "x");
  Eigen::MatrixXd x = random_matrix(6, 1, rng);
  const Eigen::Vector3d a = predict_coordinates(m, x).col(0);
  x.topRows(2) = random_matrix(2, 1, rng);
  EXPECT_EQ(a, predict_coordinates(m, x).col(0));
}

TEST(Predict, DimensionMismatch) {
  const ScrModel m = randomized(tiny_arch(), 4);
  try {
    predict_coordinate({0, Keypoint::Zero(), Eigen::VectorXd::Zero(3)}, Eigen::VectorXd::Zero(2),
                       m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kDimensionMismatch);
  }
}

TEST(RobustLoss, ExactPredictionIsZero) {
  const SceneCoordinate x(0.3, -0.4, 5.0);
  const Keypoint kp = *project(x, Pose(), cam());
  const auto l = robust_reproj_loss(x, kp, Pose(), cam(), {});
  EXPECT_NEAR(l.loss, 0.0, 1e-12);
  EXPECT_LT(l.gradient.norm(), 1e-12);
}

TEST(RobustLoss, BehindCameraUsesDistanceToTruth) {
  const SceneCoordinate pred(1, 2, -3), gt(0, 0, 5);
  const auto l = robust_reproj_loss(pred, {50, 50}, Pose(), cam(), {}, gt);
  EXPECT_DOUBLE_EQ(l.loss, (pred - gt).norm());
  EXPECT_LT((l.gradient - (pred - gt) / (pred - gt).norm()).norm(), 1e-12);
}

TEST(RobustLoss, BehindCameraWithoutTruthUsesNominalRayPoint) {
  RobustLossParams p;
  p.nominal_depth = 7.0;
  const SceneCoordinate pred(0, 0, -1);
  const auto l = robust_reproj_loss(pred, {50, 50}, Pose(), cam(), p);
  EXPECT_NEAR(l.loss, 8.0, 1e-12);
}

TEST(RobustLoss, TanhClampValue) {
  // Prediction at depth 5 reprojecting 5 px right of the keypoint.
  const SceneCoordinate pred(0.25, 0.0, 5.0);
  RobustLossParams p;
  p.switch_threshold = 50.0;
  p.clamp_scale = 50.0;
  const auto l = robust_reproj_loss(pred, {50, 50}, Pose(), cam(), p);
  EXPECT_NEAR(l.loss, 50.0 * std::tanh(5.0 / 50.0), 1e-9);
}

TEST(RobustLoss, ContinuousAcrossBranches) {
  const RobustLossParams p = small_switch();
  const SceneCoordinate gt(0, 0, 5);
  for (double edge : {p.switch_threshold, p.switch_threshold + p.blend_band}) {
    double prev_gap = std::numeric_limits<double>::infinity();
    for (double eps : {1e-2, 1e-4, 1e-6}) {
      auto at = [&](double px) {
        const SceneCoordinate pred(px * 5.0 / 100.0, 0.0, 5.0);
        return robust_reproj_loss(pred, {50, 50}, Pose(), cam(), p, gt).loss;
      };
      const double gap = std::abs(at(edge + eps) - at(edge - eps));
      EXPECT_LE(gap, prev_gap);
      prev_gap = gap;
    }
    EXPECT_LT(prev_gap, 1e-5);
  }
}

TEST(RobustLoss, GradientMatchesCentralDifferences) {
  RngStream rng(5, "rl-fd");
  const RobustLossParams p = small_switch();
  double worst = 0.0;
  int checked = 0;
  for (int t = 0; t < 400; ++t) {
    Eigen::Quaterniond q(1.0, 0.1 * rng.normal(), 0.1 * rng.normal(), 0.1 * rng.normal());
    const Pose pose(q, Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()));
    const SceneCoordinate gt =
        unproject({rng.uniform(10, 90), rng.uniform(10, 90)}, rng.uniform(3, 8), cam(), pose);
    const Keypoint kp = *project(gt, pose, cam());
    const SceneCoordinate pred =
        gt + 0.05 * rng.uniform(0, 5) * Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
    const bool with_gt = t % 2 == 0;
    auto f = [&](const SceneCoordinate& x) {
      return robust_reproj_loss(x, kp, pose, cam(), p,
                                with_gt ? std::optional<SceneCoordinate>(gt) : std::nullopt)
          .loss;
    };
    const auto an = robust_reproj_loss(pred, kp, pose, cam(), p,
                                       with_gt ? std::optional<SceneCoordinate>(gt)
                                               : std::nullopt);
    const double h = 1e-5;
    for (int d = 0; d < 3; ++d) {
      SceneCoordinate up = pred, dn = pred;
      up(d) += h;
      dn(d) -= h;
      const double fd = (f(up) - f(dn)) / (2 * h);
      const double denom = std::max({std::abs(fd), std::abs(an.gradient(d)), 1e-3});
      // Skip points straddling a branch edge, where the loss has a kink.
      if (std::abs(f(up) + f(dn) - 2 * an.loss) > 1e-6) continue;
      worst = std::max(worst, std::abs(fd - an.gradient(d)) / denom);
      ++checked;
    }
  }
  EXPECT_GT(checked, 1000);
  EXPECT_LT(worst, 1e-4);
}

TEST(NetworkGradient, MatchesCentralDifferences) {
  const CameraMap cameras = {{0, {0, Pose(), cam()}}, {1, {1, Pose(Eigen::Quaterniond::Identity(), {1, 0, 0}), cam()}}};
  for (int inst = 0; inst < 5; ++inst) {
    RngStream rng(200 + inst, "net-fd");
    ScrDataset data;
    data.globals[0] = random_matrix(2, 1, rng).col(0);
    data.globals[1] = random_matrix(2, 1, rng).col(0);
    for (int i = 0; i < 6; ++i) {
      const ImageId id = i % 2;
      const Keypoint kp(rng.uniform(20, 80), rng.uniform(20, 80));
      data.observations.push_back({id, kp, random_matrix(4, 1, rng).col(0),
                                   unproject(kp, rng.uniform(3, 8), cam(),
                                             cameras.at(id).pose)});
    }
    const TrainingBuffer buf = fill_buffer(data, 6, BufferSampling::kRandom, rng.child("buf"));
    ScrModel m = randomized(tiny_arch(), 300 + inst);
    m.w_out *= 0.01;
    m.b_out *= 0.01;
    const RobustLossParams p{20.0, 20.0, 5.0, 10.0};
    const std::vector<std::size_t> rows = {0, 1, 2, 3, 4, 5};
    const auto bl = scr_batch_loss(m, buf, rows, cameras, p, Supervision::kCoordinates);
    const Eigen::VectorXd p0 = m.flatten();
    double worst = 0.0;
    const double h = 1e-5;
    for (Eigen::Index k = 0; k < p0.size(); ++k) {
      Eigen::VectorXd v = p0;
      v(k) += h;
      m.unflatten(v);
      const double up = scr_batch_loss(m, buf, rows, cameras, p, Supervision::kCoordinates).loss;
      v(k) -= 2 * h;
      m.unflatten(v);
      const double dn = scr_batch_loss(m, buf, rows, cameras, p, Supervision::kCoordinates).loss;
      const double fd = (up - dn) / (2 * h);
      const double denom = std::max({std::abs(fd), std::abs(bl.gradient(k)), 1e-6});
      worst = std::max(worst, std::abs(fd - bl.gradient(k)) / denom);
    }
    m.unflatten(p0);
    EXPECT_LT(worst, 1e-4) << "instance " << inst;
  }
}

namespace {

ScrDataset three_obs() {
  ScrDataset d;
  d.globals[0] = Eigen::VectorXd::Zero(2);
  for (int i = 0; i < 3; ++i)
    d.observations.push_back({0, Keypoint(i, i), Eigen::VectorXd::Constant(4, i), std::nullopt});
  return d;
}

}  // namespace

TEST(Buffer, WithReplacementToCapacity) {
  const auto buf = fill_buffer(three_obs(), 10, BufferSampling::kRandom, RngStream(1, "b"));
  EXPECT_EQ(buf.size(), 10u);
  for (std::size_t i = 0; i < buf.size(); ++i) EXPECT_LT(buf.rows[i], 3u);
}

TEST(Buffer, FocusKeepsGroundedOnly) {
  ScrDataset d = three_obs();
  d.observations.push_back({0, Keypoint(5, 5), Eigen::VectorXd::Zero(4), SceneCoordinate(1, 1, 1)});
  d.observations[0].gt = SceneCoordinate(0, 0, 1);
  const auto buf = fill_buffer(d, 200, BufferSampling::kFocus, RngStream(2, "b"));
  for (std::size_t i = 0; i < buf.size(); ++i) EXPECT_TRUE(buf.row(i).gt.has_value());
  try {
    fill_buffer(three_obs(), 5, BufferSampling::kFocus, RngStream(2, "b"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kFocusModeUnavailable);
  }
}

TEST(Buffer, EmptyDatasetRejected) {
  try {
    fill_buffer(ScrDataset{}, 5, BufferSampling::kRandom, RngStream(0, "b"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kEmptyDataset);
  }
}

TEST(Buffer, UniformFrequencies) {
  ScrDataset d = three_obs();
  for (int i = 3; i < 8; ++i)
    d.observations.push_back({0, Keypoint(i, i), Eigen::VectorXd::Zero(4), std::nullopt});
  const std::size_t n = 100000;
  const auto buf = fill_buffer(d, n, BufferSampling::kRandom, RngStream(3, "b"));
  std::vector<int> counts(8, 0);
  for (auto r : buf.rows) ++counts[r];
  const double p = 1.0 / 8, sd = std::sqrt(n * p * (1 - p));
  for (int c : counts) EXPECT_LT(std::abs(c - n * p), 3.3 * sd);
}

TEST(Holdout, EveryNthPerImage) {
  ScrDataset d;
  d.globals[0] = d.globals[1] = Eigen::VectorXd::Zero(1);
  for (int i = 0; i < 10; ++i)
    d.observations.push_back({static_cast<ImageId>(i % 2), Keypoint(i, 0), Eigen::VectorXd(), std::nullopt});
  const auto [fit, held] = split_holdout(d, 2);
  // Per image positions 1..5; positions 2 and 4 are held.
  ASSERT_EQ(held.observations.size(), 4u);
  EXPECT_EQ(fit.observations.size(), 6u);
  EXPECT_EQ(held.observations[0].keypoint.x(), 2.0);
  EXPECT_EQ(held.observations[1].keypoint.x(), 3.0);
  EXPECT_EQ(split_holdout(d, 0).second.observations.size(), 0u);
  EXPECT_THROW(split_holdout(d, -1), Error);
}

TEST(Schedule, WarmupThenCosine) {
  ScrTrainConfig cfg;
  cfg.iterations = 100;
  cfg.lr_max = 1e-2;
  cfg.lr_min = 1e-4;
  EXPECT_NEAR(cfg.learning_rate(4), 1e-2, 1e-15);
  EXPECT_LT(cfg.learning_rate(0), cfg.learning_rate(1));
  EXPECT_NEAR(cfg.learning_rate(99), 1e-4, 1e-5);
  for (int it = 5; it < 99; ++it) EXPECT_GE(cfg.learning_rate(it), cfg.learning_rate(it + 1));
}

namespace {

struct ToyScene {
  CameraMap cameras;
  ScrDataset data;
};

// Each keypoint's local descriptor encodes its landmark; globals encode the image.
ToyScene toy_scene() {
  ToyScene s;
  RngStream rng(9, "toy");
  std::vector<SceneCoordinate> landmarks;
  std::vector<Eigen::VectorXd> codes;
  for (int l = 0; l < 12; ++l) {
    landmarks.emplace_back(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(5, 8));
    codes.push_back(random_matrix(4, 1, rng).col(0));
  }
  for (ImageId id = 0; id < 4; ++id) {
    const Pose pose(Eigen::Quaterniond::Identity(), Eigen::Vector3d(0.3 * id - 0.45, 0, 0));
    s.cameras[id] = {id, pose, cam()};
    s.data.globals[id] = random_matrix(2, 1, rng).col(0);
    for (int l = 0; l < 12; ++l) {
      const auto kp = project(landmarks[l], pose, cam());
      if (!kp || !cam().contains(*kp)) continue;
      s.data.observations.push_back({id, *kp, codes[l], landmarks[l]});
    }
  }
  return s;
}

ScrTrainConfig toy_config() {
  ScrTrainConfig cfg;
  cfg.width = 32;
  cfg.blocks = 1;
  cfg.buffer_capacity = 2000;
  cfg.batch_size = 64;
  cfg.iterations = 1500;
  cfg.lr_max = 1e-2;
  cfg.robust = {0.001, 10.0, 0.001, 1.0};
  cfg.seed = 4;
  return cfg;
}

}  // namespace

TEST(Training, FitsToySceneBelowTwoPixels) {
  const ToyScene s = toy_scene();
  const ScrTrainConfig cfg = toy_config();
  const auto buf = fill_buffer(s.data, cfg, RngStream(1, "buf"));
  const auto trained = train_scr(buf, s.cameras, cfg);
  EXPECT_LT(trained.loss_trace.back(), trained.loss_trace.front());
  EXPECT_LT(mean_reprojection_residual(trained.model, s.data, s.cameras), 2.0);
}

TEST(Training, DeterministicIncludingJitter) {
  const ToyScene s = toy_scene();
  ScrTrainConfig cfg = toy_config();
  cfg.iterations = 40;
  cfg.jitter_global = 0.05;
  cfg.jitter_local = 0.02;
  const auto buf = fill_buffer(s.data, cfg, RngStream(1, "buf"));
  const auto a = train_scr(buf, s.cameras, cfg);
  const auto b = train_scr(buf, s.cameras, cfg);
  EXPECT_EQ(a.model, b.model);
  EXPECT_EQ(a.loss_trace, b.loss_trace);
  cfg.jitter_local = 0.0;
  EXPECT_NE(train_scr(buf, s.cameras, cfg).loss_trace, a.loss_trace);
}

TEST(Training, MissingPoseRejected) {
  const ToyScene s = toy_scene();
  const ScrTrainConfig cfg = toy_config();
  const auto buf = fill_buffer(s.data, cfg, RngStream(1, "buf"));
  CameraMap partial = s.cameras;
  partial.erase(0);
  try {
    train_scr(buf, partial, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kIdMismatch);
  }
}

TEST(Training, ConfigValidation) {
  ScrTrainConfig cfg;
  cfg.batch_size = static_cast<int>(cfg.buffer_capacity) + 1;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.robust.switch_threshold = 0.0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.jitter_local = -1.0;
  EXPECT_THROW(cfg.validate(), Error);
}
