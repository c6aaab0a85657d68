#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "scrk/common.hpp"
#include "scrk/error.hpp"
#include "scrk/geometry.hpp"
#include "scrk/rng.hpp"

namespace scrk {

struct OverlapConfig {
  int samples_per_image = 100;
  int depths_per_pixel = 10;
  double depth_min = 0.5;
  double depth_max = 20.0;
  double edge_threshold = 0.2;

  void validate() const {
    SCRK_CHECK(samples_per_image >= 1 && depths_per_pixel >= 1,
               Errc::kInvalidArgument, "overlap sample counts must be >= 1");
    SCRK_CHECK(depth_min > 0.0 && depth_min < depth_max,
               Errc::kInvalidArgument, "need 0 < depth_min < depth_max");
    SCRK_CHECK(edge_threshold >= 0.0 && edge_threshold <= 1.0,
               Errc::kInvalidArgument, "edge_threshold must be in [0,1]");
  }
};

struct CameraEntry {
  ImageId id = 0;
  Pose pose;
  CameraIntrinsics intrinsics;
};

// Overlap scores are stored at the 6-decimal precision of the graph file.
inline double quantize_psi(double psi) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", psi);
  return std::stod(buf);
}

struct CovisEdge {
  ImageId i = 0;
  ImageId j = 0;
  double psi = 0.0;

  bool operator==(const CovisEdge&) const = default;
};

class CovisGraph {
 public:
  CovisGraph() = default;
  explicit CovisGraph(std::vector<ImageId> nodes) {
    for (ImageId id : nodes) add_node(id);
  }

  void add_node(ImageId id) {
    auto it = std::lower_bound(nodes_.begin(), nodes_.end(), id);
    if (it == nodes_.end() || *it != id) nodes_.insert(it, id);
  }

  void add_edge(ImageId a, ImageId b, double psi) {
    SCRK_CHECK(a != b, Errc::kInvalidArgument, "self-edge");
    SCRK_CHECK(psi >= 0.0 && psi <= 1.0, Errc::kInvalidArgument,
               "overlap score outside [0,1]");
    const ImageId i = std::min(a, b), j = std::max(a, b);
    SCRK_CHECK(!has_edge(i, j), Errc::kInvalidArgument,
               "duplicate edge " + std::to_string(i) + "-" + std::to_string(j));
    add_node(i);
    add_node(j);
    const CovisEdge e{i, j, quantize_psi(psi)};
    auto it = std::lower_bound(edges_.begin(), edges_.end(), e,
                               [](const CovisEdge& x, const CovisEdge& y) {
                                 return std::tie(x.i, x.j) < std::tie(y.i, y.j);
                               });
    edges_.insert(it, e);
    lookup_[key(i, j)] = e.psi;
  }

  bool has_edge(ImageId a, ImageId b) const {
    return lookup_.count(key(std::min(a, b), std::max(a, b))) > 0;
  }

  // 0 for non-adjacent pairs.
  double psi(ImageId a, ImageId b) const {
    auto it = lookup_.find(key(std::min(a, b), std::max(a, b)));
    return it == lookup_.end() ? 0.0 : it->second;
  }

  const std::vector<ImageId>& nodes() const { return nodes_; }
  const std::vector<CovisEdge>& edges() const { return edges_; }
  std::size_t num_edges() const { return edges_.size(); }

  bool operator==(const CovisGraph& o) const {
    return nodes_ == o.nodes_ && edges_ == o.edges_;
  }

 private:
  static std::uint64_t key(ImageId i, ImageId j) {
    return (static_cast<std::uint64_t>(i) << 32) | j;
  }

  std::vector<ImageId> nodes_;
  std::vector<CovisEdge> edges_;
  std::unordered_map<std::uint64_t, double> lookup_;
};

// Normalized pixel positions and depths, shared by both directions of a pair so
// the symmetrized score is exactly symmetric.
struct OverlapSamples {
  std::vector<Eigen::Vector2d> pixels;  // in [0,1)^2
  std::vector<double> depths;           // depths_per_pixel per pixel
  int depths_per_pixel = 1;
};

inline OverlapSamples draw_overlap_samples(const OverlapConfig& cfg,
                                           RngStream& rng) {
  OverlapSamples s;
  s.depths_per_pixel = cfg.depths_per_pixel;
  s.pixels.reserve(cfg.samples_per_image);
  s.depths.reserve(static_cast<std::size_t>(cfg.samples_per_image) *
                   cfg.depths_per_pixel);
  for (int p = 0; p < cfg.samples_per_image; ++p) {
    const double a = rng.uniform();
    const double b = rng.uniform();
    s.pixels.emplace_back(a, b);
    for (int d = 0; d < cfg.depths_per_pixel; ++d)
      s.depths.push_back(rng.uniform(cfg.depth_min, cfg.depth_max));
  }
  return s;
}

// Fraction of hypotheses from image i that land inside image j in front of it.
inline double directional_overlap(const OverlapSamples& samples,
                                  const Pose& pose_i, const CameraIntrinsics& k_i,
                                  const Pose& pose_j,
                                  const CameraIntrinsics& k_j) {
  std::size_t inside = 0;
  for (std::size_t p = 0; p < samples.pixels.size(); ++p) {
    const Keypoint px(samples.pixels[p].x() * k_i.width,
                      samples.pixels[p].y() * k_i.height);
    for (int d = 0; d < samples.depths_per_pixel; ++d) {
      const double depth = samples.depths[p * samples.depths_per_pixel + d];
      const auto proj = project(unproject(px, depth, k_i, pose_i), pose_j, k_j);
      if (proj && k_j.contains(*proj)) ++inside;
    }
  }
  return static_cast<double>(inside) /
         static_cast<double>(samples.depths.size());
}

inline double overlap_score(const Pose& pose_i, const CameraIntrinsics& k_i,
                            const Pose& pose_j, const CameraIntrinsics& k_j,
                            const OverlapConfig& cfg, RngStream rng) {
  cfg.validate();
  const OverlapSamples samples = draw_overlap_samples(cfg, rng);
  const double ij = directional_overlap(samples, pose_i, k_i, pose_j, k_j);
  const double ji = directional_overlap(samples, pose_j, k_j, pose_i, k_i);
  return 0.5 * (ij + ji);
}

inline CovisGraph build_graph(std::vector<CameraEntry> images,
                              const OverlapConfig& cfg, const RngStream& rng) {
  cfg.validate();
  std::sort(images.begin(), images.end(),
            [](const CameraEntry& a, const CameraEntry& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < images.size(); ++i)
    SCRK_CHECK(images[i].id != images[i - 1].id, Errc::kDuplicateImageId,
               "duplicate image id " + std::to_string(images[i].id));
  SCRK_CHECK(images.size() >= 2, Errc::kInvalidArgument,
             "covisibility graph needs at least two images");

  CovisGraph graph;
  for (const auto& im : images) graph.add_node(im.id);
  for (std::size_t a = 0; a < images.size(); ++a) {
    for (std::size_t b = a + 1; b < images.size(); ++b) {
      const auto& ia = images[a];
      const auto& ib = images[b];
      const double psi =
          quantize_psi(overlap_score(ia.pose, ia.intrinsics, ib.pose,
                                     ib.intrinsics, cfg,
                                     rng.child("pair", ia.id, ib.id)));
      if (psi >= cfg.edge_threshold) graph.add_edge(ia.id, ib.id, psi);
    }
  }
  return graph;
}

inline std::vector<std::pair<ImageId, ImageId>> non_adjacent_pairs(
    const CovisGraph& graph) {
  std::vector<std::pair<ImageId, ImageId>> out;
  const auto& nodes = graph.nodes();
  for (std::size_t a = 0; a < nodes.size(); ++a)
    for (std::size_t b = a + 1; b < nodes.size(); ++b)
      if (!graph.has_edge(nodes[a], nodes[b])) out.emplace_back(nodes[a], nodes[b]);
  return out;
}

// Floyd's algorithm: `count` distinct indices from [0, n), in draw order.
inline std::vector<std::size_t> sample_without_replacement(std::size_t n,
                                                           std::size_t count,
                                                           RngStream& rng) {
  std::vector<std::size_t> picked;
  std::set<std::size_t> seen;
  for (std::size_t j = n - count; j < n; ++j) {
    const std::size_t t = rng.uniform_index(j + 1);
    if (seen.insert(t).second) {
      picked.push_back(t);
    } else {
      seen.insert(j);
      picked.push_back(j);
    }
  }
  return picked;
}

// Adds ceil(fraction * |E|) false edges between non-adjacent pairs, with
// psi ~ U[0.5, 1].
inline CovisGraph corrupt_graph(const CovisGraph& graph, double false_edge_fraction,
                                RngStream rng) {
  SCRK_CHECK(false_edge_fraction >= 0.0 && false_edge_fraction <= 1.0,
             Errc::kInvalidArgument, "false_edge_fraction must be in [0,1]");
  const auto count = static_cast<std::size_t>(std::ceil(
      false_edge_fraction * static_cast<double>(graph.num_edges()) - 1e-9));
  CovisGraph out = graph;
  if (count == 0) return out;
  const auto candidates = non_adjacent_pairs(graph);
  SCRK_CHECK(candidates.size() >= count, Errc::kGraphSaturated,
             "need " + std::to_string(count) + " non-adjacent pairs, only " +
                 std::to_string(candidates.size()) + " remain");
  for (std::size_t idx : sample_without_replacement(candidates.size(), count, rng)) {
    const auto& [i, j] = candidates[idx];
    out.add_edge(i, j, rng.uniform(0.5, 1.0));
  }
  return out;
}

}  // namespace scrk
