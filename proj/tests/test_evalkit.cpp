#include <gtest/gtest.h>

#include <numbers>

#include "scrk/evalkit.hpp"

using namespace scrk;

namespace {

const std::vector<ErrorThreshold> kThresholds = {{0.1, 1}, {0.25, 2}, {0.5, 5}, {5, 10}};

Pose at(double x, double y = 0.0) {
  return Pose(Eigen::Quaterniond::Identity(), Eigen::Vector3d(x, y, 0));
}

Pose yawed(double x, double deg) {
  return Pose::from_matrix(
      Eigen::AngleAxisd(deg * std::numbers::pi / 180.0, Eigen::Vector3d::UnitY())
          .toRotationMatrix(),
      Eigen::Vector3d(x, 0, 0));
}

void expect_monotone(const ThresholdTable& t) {
  for (std::size_t i = 1; i < t.fractions.size(); ++i)
    EXPECT_GE(t.fractions[i], t.fractions[i - 1]);
  double sum = 0.0;
  for (double f : t.fractions) {
    EXPECT_GE(f, 0.0);
    EXPECT_LE(f, 1.0);
    sum += f;
  }
  EXPECT_NEAR(t.average, sum / t.fractions.size(), 1e-9);
}

}  // namespace

TEST(Accuracy, ExactEstimatesPassEverywhere) {
  PoseEstimates est;
  std::map<ImageId, Pose> truth;
  for (ImageId i = 0; i < 5; ++i) {
    truth[i] = yawed(i, 10.0 * i);
    est[i] = truth[i];
  }
  const auto t = accuracy_at_thresholds(est, truth, kThresholds);
  for (double f : t.fractions) EXPECT_EQ(f, 1.0);
  EXPECT_EQ(t.average, 1.0);
  expect_monotone(t);
}

TEST(Accuracy, ThresholdBoundaries) {
  const PoseEstimates est = {{1, at(0.3)}};
  const std::map<ImageId, Pose> truth = {{1, at(0.0)}};
  const auto t = accuracy_at_thresholds(est, truth, {{0.25, 2}, {0.5, 5}});
  EXPECT_EQ(t.fractions[0], 0.0);
  EXPECT_EQ(t.fractions[1], 1.0);
  // Inclusive at equality.
  const auto eq = accuracy_at_thresholds({{1, at(0.5)}}, truth, {{0.5, 5}});
  EXPECT_EQ(eq.fractions[0], 1.0);
}

TEST(Accuracy, BothErrorsMustPass) {
  const std::map<ImageId, Pose> truth = {{1, yawed(0, 0)}};
  const auto t = accuracy_at_thresholds({{1, yawed(0.01, 3)}}, truth, kThresholds);
  EXPECT_EQ(t.fractions[0], 0.0);
  EXPECT_EQ(t.fractions[1], 0.0);
  EXPECT_EQ(t.fractions[2], 1.0);
}

TEST(Accuracy, NoPoseFailsEverywhere) {
  const std::map<ImageId, Pose> truth = {{1, at(0)}, {2, at(1)}};
  const auto t = accuracy_at_thresholds({{1, std::nullopt}, {2, at(1)}}, truth, kThresholds);
  for (double f : t.fractions) EXPECT_EQ(f, 0.5);
  EXPECT_EQ(t.query_count, 2u);
}

TEST(Accuracy, IdMismatch) {
  try {
    accuracy_at_thresholds({{1, at(0)}}, {{2, at(0)}}, kThresholds);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kIdMismatch);
  }
  EXPECT_THROW(accuracy_at_thresholds({{1, at(0)}}, {{1, at(0)}, {2, at(0)}}, kThresholds), Error);
}

TEST(Accuracy, RandomTablesAreMonotone) {
  RngStream rng(1, "acc");
  PoseEstimates est;
  std::map<ImageId, Pose> truth;
  for (ImageId i = 0; i < 200; ++i) {
    truth[i] = yawed(0, 0);
    est[i] = rng.uniform() < 0.1 ? std::nullopt
                                 : std::optional<Pose>(yawed(rng.uniform(0, 1), rng.uniform(0, 12)));
  }
  expect_monotone(accuracy_at_thresholds(est, truth, kThresholds));
}

TEST(Rendering, MockedTableAverage) {
  ThresholdTable t;
  t.thresholds = {{0.25, 2}, {0.5, 5}, {5, 10}};
  t.fractions = {0.801, 0.898, 0.970};
  t.average = (0.801 + 0.898 + 0.970) / 3.0;
  t.query_count = 1000;
  const std::string text = render_table_text(t, "ours");
  EXPECT_NE(text.find("80.1"), std::string::npos);
  EXPECT_NE(text.find("89.8"), std::string::npos);
  EXPECT_NE(text.find("97.0"), std::string::npos);
  EXPECT_NE(text.find("89.0"), std::string::npos);
  EXPECT_NE(text.find("0.25/2deg"), std::string::npos);
  const std::string csv = render_table_csv(t, "ours");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "method,0.25/2deg,0.5/5deg,5/10deg,avg");
}

TEST(Median, OddEvenAndEmpty) {
  EXPECT_EQ(median({3, 1, 2}), 2.0);
  EXPECT_EQ(median({4, 1, 3, 2}), 2.5);
  EXPECT_THROW(median({}), Error);
}

TEST(RetrievalCurve, SelfRetrievalIsZeroAtK1) {
  std::map<ImageId, Pose> train;
  std::vector<GlobalDescriptor> descs;
  std::vector<QueryDescriptor> queries;
  RngStream rng(2, "curve-self");
  for (ImageId i = 0; i < 20; ++i) {
    train[i] = at(i);
    Eigen::VectorXd v(6);
    for (int d = 0; d < 6; ++d) v(d) = rng.normal();
    descs.push_back({i, v});
    queries.push_back({{100 + i, v}, train[i]});
  }
  const auto c = retrieval_median_error(build_index(descs), queries, train, 5);
  EXPECT_EQ(c.median_error[0], 0.0);
  EXPECT_EQ(c.k, (std::vector<std::size_t>{1, 2, 3, 4, 5}));
}

TEST(RetrievalCurve, DistanceOrderedRankingIsNonDecreasing) {
  std::map<ImageId, Pose> train;
  for (ImageId i = 0; i < 30; ++i) train[i] = at(0.7 * i, 0.3 * (i % 4));
  std::vector<std::pair<Pose, std::vector<ImageId>>> ranked;
  RngStream rng(3, "curve-mono");
  for (int q = 0; q < 15; ++q) {
    const Pose p = at(rng.uniform(0, 20), rng.uniform(-1, 1));
    std::vector<std::pair<double, ImageId>> d;
    for (const auto& [id, tp] : train) d.emplace_back((tp.center() - p.center()).norm(), id);
    std::sort(d.begin(), d.end());
    std::vector<ImageId> ids;
    for (const auto& [_, id] : d) ids.push_back(id);
    ranked.emplace_back(p, ids);
  }
  const auto c = curve_from_rankings(ranked, train, 20);
  for (std::size_t i = 1; i < c.median_error.size(); ++i)
    EXPECT_GE(c.median_error[i], c.median_error[i - 1]);
}

TEST(RetrievalCurve, RandomDescriptorsMatchPairwiseMedian) {
  RngStream rng(4, "curve-random");
  std::map<ImageId, Pose> train;
  std::vector<GlobalDescriptor> descs;
  for (ImageId i = 0; i < 200; ++i) {
    train[i] = at(rng.uniform(0, 100));
    Eigen::VectorXd v(16);
    for (int d = 0; d < 16; ++d) v(d) = rng.normal();
    descs.push_back({i, v});
  }
  std::vector<QueryDescriptor> queries;
  for (ImageId q = 0; q < 1000; ++q) {
    Eigen::VectorXd v(16);
    for (int d = 0; d < 16; ++d) v(d) = rng.normal();
    queries.push_back({{1000 + q, v}, at(rng.uniform(0, 100))});
  }
  std::vector<double> pairwise;
  for (const auto& q : queries)
    for (const auto& [_, p] : train) pairwise.push_back((p.center() - q.pose.center()).norm());
  const double brute = median(pairwise);
  const auto c = retrieval_median_error(build_index(descs), queries, train, 1);
  EXPECT_NEAR(c.median_error[0], brute, 4.0);
}

TEST(RetrievalCurve, RandomBaselineDeterministicAndBounded) {
  std::map<ImageId, Pose> train;
  for (ImageId i = 0; i < 40; ++i) train[i] = at(i);
  const std::vector<Pose> qp = {at(3.5), at(20.5), at(33.2)};
  const auto a = random_retrieval_curve(qp, train, 10, 50, RngStream(5, "rb"));
  const auto b = random_retrieval_curve(qp, train, 10, 50, RngStream(5, "rb"));
  EXPECT_EQ(a.median_error, b.median_error);
  for (double v : a.median_error) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 40.0);
  }
  EXPECT_THROW(random_retrieval_curve(qp, train, 41, 1, RngStream(5, "rb")), Error);
}

TEST(Recall, NearestNeighborHit) {
  std::map<ImageId, Pose> train;
  std::vector<GlobalDescriptor> descs;
  for (ImageId i = 0; i < 10; ++i) {
    train[i] = at(i);
    Eigen::VectorXd v = Eigen::VectorXd::Zero(10);
    v(i) = 1.0;
    descs.push_back({i, v});
  }
  const auto index = build_index(descs);
  Eigen::VectorXd good = Eigen::VectorXd::Zero(10), bad = Eigen::VectorXd::Zero(10);
  good(3) = 1.0;
  bad(9) = 1.0;
  const std::vector<QueryDescriptor> queries = {{{50, good}, at(3.1)}, {{51, bad}, at(3.1)}};
  EXPECT_EQ(recall_at_k(index, queries, train, 1, 1), 0.5);
  EXPECT_EQ(recall_at_k(index, {queries[1]}, train, 1, 10), 1.0);
}

TEST(Curve, Rendering) {
  RetrievalErrorCurve c{{1, 2}, {0.5, 1.25}};
  EXPECT_EQ(render_curve(c), "# k median_translation_error\n1 0.500000\n2 1.250000\n");
}
