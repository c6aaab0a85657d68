#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "scrk/error.hpp"
#include "scrk/geometry.hpp"
#include "scrk/localize.hpp"
#include "scrk/rng.hpp"

namespace scrk {

struct ErrorThreshold {
  double translation = 0.0;
  double rotation_deg = 0.0;
};

struct ThresholdTable {
  std::vector<ErrorThreshold> thresholds;
  std::vector<double> fractions;
  std::size_t query_count = 0;
  double average = 0.0;
};

// nullopt estimate = no pose.
using PoseEstimates = std::map<ImageId, std::optional<Pose>>;

inline bool within(const PoseError& e, const ErrorThreshold& t) {
  return e.translation <= t.translation && e.rotation_deg <= t.rotation_deg;
}

inline ThresholdTable accuracy_at_thresholds(const PoseEstimates& estimates,
                                             const std::map<ImageId, Pose>& truths,
                                             const std::vector<ErrorThreshold>& thresholds) {
  SCRK_CHECK(!thresholds.empty(), Errc::kInvalidArgument, "no thresholds");
  SCRK_CHECK(estimates.size() == truths.size(), Errc::kIdMismatch,
             "estimate and ground-truth counts differ");
  ThresholdTable t;
  t.thresholds = thresholds;
  t.query_count = estimates.size();
  t.fractions.assign(thresholds.size(), 0.0);
  for (const auto& [id, est] : estimates) {
    auto it = truths.find(id);
    SCRK_CHECK(it != truths.end(), Errc::kIdMismatch,
               "no ground truth for query " + std::to_string(id));
    if (!est) continue;
    const PoseError e = pose_error(*est, it->second);
    for (std::size_t i = 0; i < thresholds.size(); ++i)
      if (within(e, thresholds[i])) t.fractions[i] += 1.0;
  }
  double sum = 0.0;
  for (auto& f : t.fractions) {
    if (t.query_count > 0) f /= static_cast<double>(t.query_count);
    sum += f;
  }
  t.average = sum / static_cast<double>(t.fractions.size());
  return t;
}

inline std::string format_threshold(const ErrorThreshold& t) {
  std::ostringstream os;
  os << t.translation << "/" << t.rotation_deg << "deg";
  return os.str();
}

// Percentages, one row, plus an average column.
inline std::string render_table_text(const ThresholdTable& t, const std::string& label) {
  std::string out;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%-12s", "method");
  out += buf;
  for (const auto& th : t.thresholds) {
    std::snprintf(buf, sizeof(buf), " %14s", format_threshold(th).c_str());
    out += buf;
  }
  out += "        avg\n";
  std::snprintf(buf, sizeof(buf), "%-12s", label.c_str());
  out += buf;
  for (double f : t.fractions) {
    std::snprintf(buf, sizeof(buf), " %14.1f", 100.0 * f);
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), " %10.1f\n", 100.0 * t.average);
  out += buf;
  return out;
}

inline std::string render_table_csv(const ThresholdTable& t, const std::string& label) {
  std::string head = "method", row = label;
  char buf[64];
  for (std::size_t i = 0; i < t.thresholds.size(); ++i) {
    head += "," + format_threshold(t.thresholds[i]);
    std::snprintf(buf, sizeof(buf), ",%.6f", t.fractions[i]);
    row += buf;
  }
  std::snprintf(buf, sizeof(buf), ",%.6f", t.average);
  return head + ",avg\n" + row + buf + "\n";
}

// ---------------------------------------------------------------------------
// Retrieval

struct RetrievalErrorCurve {
  std::vector<std::size_t> k;
  std::vector<double> median_error;
};

struct QueryDescriptor {
  GlobalDescriptor descriptor;
  Pose pose;
};

inline double median(std::vector<double> v) {
  SCRK_CHECK(!v.empty(), Errc::kEmptyInput, "median of empty set");
  const std::size_t m = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + m, v.end());
  if (v.size() % 2 == 1) return v[m];
  const double hi = v[m];
  const double lo = *std::max_element(v.begin(), v.begin() + m);
  return 0.5 * (lo + hi);
}

// Curve from explicit per-query rankings (ids in retrieval order).
inline RetrievalErrorCurve curve_from_rankings(
    const std::vector<std::pair<Pose, std::vector<ImageId>>>& ranked,
    const std::map<ImageId, Pose>& training_poses, std::size_t k_max) {
  SCRK_CHECK(!ranked.empty(), Errc::kEmptyInput, "no queries");
  RetrievalErrorCurve c;
  for (std::size_t k = 1; k <= k_max; ++k) {
    std::vector<double> per_query;
    for (const auto& [pose, ids] : ranked) {
      SCRK_CHECK(ids.size() >= k, Errc::kKTooLarge, "ranking shorter than k");
      std::vector<double> d;
      for (std::size_t i = 0; i < k; ++i) {
        auto it = training_poses.find(ids[i]);
        SCRK_CHECK(it != training_poses.end(), Errc::kIdMismatch,
                   "no pose for training image " + std::to_string(ids[i]));
        d.push_back((it->second.center() - pose.center()).norm());
      }
      per_query.push_back(median(d));
    }
    c.k.push_back(k);
    c.median_error.push_back(median(per_query));
  }
  return c;
}

inline RetrievalErrorCurve retrieval_median_error(
    const RetrievalIndex& index, const std::vector<QueryDescriptor>& queries,
    const std::map<ImageId, Pose>& training_poses, std::size_t k_max,
    SearchMode mode = SearchMode::kExact) {
  SCRK_CHECK(k_max >= 1 && k_max <= index.size(), Errc::kKTooLarge,
             "k_max exceeds index size");
  std::vector<std::pair<Pose, std::vector<ImageId>>> ranked;
  for (const auto& q : queries)
    ranked.emplace_back(q.pose, retrieve_topk(index, q.descriptor.values, k_max, mode));
  return curve_from_rankings(ranked, training_poses, k_max);
}

// Baseline: uniformly random rankings, averaged pointwise over trials.
inline RetrievalErrorCurve random_retrieval_curve(
    const std::vector<Pose>& query_poses, const std::map<ImageId, Pose>& training_poses,
    std::size_t k_max, int trials, RngStream rng) {
  SCRK_CHECK(k_max >= 1 && k_max <= training_poses.size(), Errc::kKTooLarge,
             "k_max exceeds training set");
  std::vector<ImageId> ids;
  for (const auto& [id, _] : training_poses) ids.push_back(id);
  RetrievalErrorCurve mean;
  for (int t = 0; t < trials; ++t) {
    std::vector<std::pair<Pose, std::vector<ImageId>>> ranked;
    for (const auto& p : query_poses) {
      std::vector<ImageId> perm = ids;
      for (std::size_t i = perm.size() - 1; i > 0; --i)
        std::swap(perm[i], perm[rng.uniform_index(i + 1)]);
      ranked.emplace_back(p, std::move(perm));
    }
    const auto c = curve_from_rankings(ranked, training_poses, k_max);
    if (t == 0) {
      mean = c;
    } else {
      for (std::size_t i = 0; i < c.k.size(); ++i) mean.median_error[i] += c.median_error[i];
    }
  }
  for (auto& v : mean.median_error) v /= trials;
  return mean;
}

inline std::string render_curve(const RetrievalErrorCurve& c) {
  std::string out = "# k median_translation_error\n";
  char buf[64];
  for (std::size_t i = 0; i < c.k.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu %.6f\n", c.k[i], c.median_error[i]);
    out += buf;
  }
  return out;
}

// Fraction of queries whose top-k retrievals contain at least one of their
// `neighbors` nearest training cameras by true camera center.
inline double recall_at_k(const RetrievalIndex& index,
                          const std::vector<QueryDescriptor>& queries,
                          const std::map<ImageId, Pose>& training_poses, std::size_t k,
                          std::size_t neighbors, SearchMode mode = SearchMode::kExact) {
  SCRK_CHECK(!queries.empty(), Errc::kEmptyInput, "no queries");
  SCRK_CHECK(neighbors >= 1 && neighbors <= training_poses.size(), Errc::kKTooLarge,
             "neighbors exceeds training set");
  std::size_t hits = 0;
  for (const auto& q : queries) {
    std::vector<std::pair<double, ImageId>> by_dist;
    for (const auto& [id, p] : training_poses)
      by_dist.emplace_back((p.center() - q.pose.center()).norm(), id);
    std::sort(by_dist.begin(), by_dist.end());
    const auto top = retrieve_topk(index, q.descriptor.values, k, mode);
    bool hit = false;
    for (std::size_t i = 0; i < neighbors && !hit; ++i)
      hit = std::find(top.begin(), top.end(), by_dist[i].second) != top.end();
    hits += hit ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(queries.size());
}

}  // namespace scrk
