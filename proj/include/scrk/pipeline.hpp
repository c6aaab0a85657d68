#pragma once

#include <cinttypes>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "scrk/aggregator.hpp"
#include "scrk/config.hpp"
#include "scrk/covis.hpp"
#include "scrk/evalkit.hpp"
#include "scrk/io.hpp"
#include "scrk/localize.hpp"
#include "scrk/scr.hpp"
#include "scrk/synthgen.hpp"

namespace scrk {

// A scene as consumed by every downstream stage, whether synthetic or loaded.
struct SceneData {
  std::vector<CameraEntry> train;
  std::vector<CameraEntry> query;
  io::ObservationSet observations;  // all images
  FeatureStore features;
  std::set<ImageId> aliased;  // images seeing an aliased landmark

  CameraMap camera_map(bool query_set) const {
    CameraMap m;
    for (const auto& c : query_set ? query : train) m[c.id] = c;
    return m;
  }
};

namespace scene_files {
inline constexpr const char* kTrainPoses = "train_poses.txt";
inline constexpr const char* kTrainIntrinsics = "train_intrinsics.txt";
inline constexpr const char* kQueryPoses = "query_poses.txt";
inline constexpr const char* kQueryIntrinsics = "query_intrinsics.txt";
inline constexpr const char* kKeypoints = "keypoints.txt";
inline constexpr const char* kLocals = "locals.dsc";
inline constexpr const char* kGroundTruth = "ground_truth.txt";
inline constexpr const char* kFeatures = "features.dsc";
inline constexpr const char* kAliased = "aliased_images.txt";
}  // namespace scene_files

inline SceneData synthesize_scene(const SceneConfig& cfg) {
  const SyntheticScene scene = generate_scene(cfg);
  const auto rendered = render_observations(scene, cfg, RngStream(cfg.seed, "render"));
  SceneData d;
  d.train = scene.entries(false);
  d.query = scene.entries(true);
  for (std::size_t i = 0; i < rendered.size(); ++i) {
    const auto& r = rendered[i];
    auto& o = d.observations[r.image_id];
    o.locals = r.locals;
    for (const auto& g : r.gt) o.gt.emplace_back(g);
    d.features.add(r.features);
    if (scene.is_aliased_image(i)) d.aliased.insert(r.image_id);
  }
  return d;
}

inline void write_scene(const std::filesystem::path& dir, const SceneData& d) {
  namespace f = scene_files;
  io::write_poses(dir / f::kTrainPoses, dir / f::kTrainIntrinsics, d.train);
  io::write_poses(dir / f::kQueryPoses, dir / f::kQueryIntrinsics, d.query);
  io::write_file_atomic(dir / f::kKeypoints, io::encode_keypoints(d.observations));
  io::write_descriptors(dir / f::kLocals, io::locals_to_file(d.observations));
  io::write_file_atomic(dir / f::kGroundTruth, io::encode_ground_truth(d.observations));
  std::vector<VisualFeatureMap> maps;
  for (ImageId id : d.features.ids()) maps.push_back(d.features.at(id));
  io::write_descriptors(dir / f::kFeatures, io::features_to_file(maps));
  std::string aliased = "# image_id\n";
  for (ImageId id : d.aliased) aliased += std::to_string(id) + "\n";
  io::write_file_atomic(dir / f::kAliased, aliased);
}

inline SceneData read_scene(const std::filesystem::path& dir,
                            std::vector<std::string>* warnings = nullptr) {
  namespace f = scene_files;
  SceneData d;
  d.train = io::read_poses(dir / f::kTrainPoses, dir / f::kTrainIntrinsics, warnings);
  d.query = io::read_poses(dir / f::kQueryPoses, dir / f::kQueryIntrinsics, warnings);
  std::optional<std::string> gt;
  if (std::filesystem::exists(dir / f::kGroundTruth)) gt = io::read_file(dir / f::kGroundTruth);
  d.observations = io::decode_observations(
      io::read_file(dir / f::kKeypoints), (dir / f::kKeypoints).string(),
      io::read_descriptors(dir / f::kLocals), gt, (dir / f::kGroundTruth).string());
  d.features = io::features_from_file(io::read_descriptors(dir / f::kFeatures));
  if (std::filesystem::exists(dir / f::kAliased)) {
    const std::string src = (dir / f::kAliased).string();
    io::for_each_record(io::read_file(dir / f::kAliased), src,
                        [&](const auto& fields, const io::LineParser& p) {
                          d.aliased.insert(p.template to_int<ImageId>(fields[0]));
                        });
  }
  return d;
}

// ---------------------------------------------------------------------------
// Stages

inline CovisGraph run_covis(const SceneData& d, const PipelineConfig& cfg) {
  return build_graph(d.train, cfg.covis, RngStream(cfg.covis_seed, "covis"));
}

inline TrainedAggregator run_train_agg(const SceneData& d, const CovisGraph& graph,
                                       const PipelineConfig& cfg) {
  AggTrainConfig a = cfg.aggregator;
  a.dims.feat_dim = static_cast<int>(d.features.at(d.train.front().id).tokens.cols());
  return train_aggregator(d.features, graph, a);
}

inline std::vector<GlobalDescriptor> image_descriptors(const SceneData& d,
                                                       const std::vector<CameraEntry>& cams,
                                                       const AggregatorModel& model,
                                                       const PcaModel& pca) {
  std::vector<GlobalDescriptor> out;
  for (const auto& c : cams) out.push_back(global_descriptor(d.features.at(c.id), model, pca));
  return out;
}

inline RetrievalIndex run_build_index(const SceneData& d, const AggregatorModel& model,
                                      const PcaModel& pca, const PipelineConfig& cfg) {
  std::optional<PqOptions> pq;
  if (cfg.localize.use_pq) pq = cfg.localize.pq;
  return build_index(image_descriptors(d, d.train, model, pca), pq);
}

inline std::map<ImageId, Eigen::VectorXd> index_globals(const RetrievalIndex& index) {
  std::map<ImageId, Eigen::VectorXd> m;
  for (std::size_t r = 0; r < index.size(); ++r) m[index.ids[r]] = index.entries.row(r).transpose();
  return m;
}

inline Eigen::VectorXd compress_with(const PcaModel& pca, const Eigen::VectorXd& raw) {
  Eigen::VectorXd v = pca_apply(pca, raw);
  round_f32_inplace(v);
  return v;
}

inline PcaModel fit_local_pca(const SceneData& d, int local_dim) {
  std::size_t n = 0;
  Eigen::Index dim = 0;
  for (const auto& c : d.train) {
    const auto& locals = d.observations.at(c.id).locals;
    n += locals.size();
    if (!locals.empty()) dim = locals.front().values.size();
  }
  SCRK_CHECK(n > 0, Errc::kEmptyDataset, "training images have no keypoints");
  Eigen::MatrixXd rows(static_cast<Eigen::Index>(n), dim);
  Eigen::Index r = 0;
  for (const auto& c : d.train)
    for (const auto& l : d.observations.at(c.id).locals) rows.row(r++) = l.values.transpose();
  PcaModel p = pca_fit(rows, local_dim);
  round_f32_inplace(p);
  return p;
}

// Training observations with compressed locals and the given conditioning
// descriptors.
inline ScrDataset scr_dataset(const SceneData& d, const std::vector<CameraEntry>& cams,
                              const std::map<ImageId, Eigen::VectorXd>& globals,
                              const PcaModel& local_pca) {
  ScrDataset ds;
  for (const auto& c : cams) {
    const auto& o = d.observations.at(c.id);
    for (std::size_t i = 0; i < o.locals.size(); ++i)
      ds.observations.push_back({c.id, o.locals[i].keypoint,
                                 compress_with(local_pca, o.locals[i].values),
                                 i < o.gt.size() ? o.gt[i] : std::nullopt});
    ds.globals[c.id] = globals.at(c.id);
  }
  return ds;
}

struct ScrRun {
  TrainedScr trained;
  std::optional<double> holdout_residual;  // mean pixels on held-out training keypoints
};

inline ScrRun run_train_scr(const SceneData& d, const AggregatorModel& agg,
                            const PcaModel& global_pca, const PipelineConfig& cfg) {
  std::map<ImageId, Eigen::VectorXd> globals;
  for (const auto& g : image_descriptors(d, d.train, agg, global_pca)) globals[g.image_id] = g.values;
  const PcaModel local_pca = fit_local_pca(d, cfg.localize.local_dim);
  auto [fit, held] = split_holdout(scr_dataset(d, d.train, globals, local_pca),
                                   cfg.scr.holdout_every);
  const TrainingBuffer buf = fill_buffer(std::move(fit), cfg.scr, RngStream(cfg.scr.seed, "buffer"));
  const CameraMap cameras = d.camera_map(false);
  ScrRun run{train_scr(buf, cameras, cfg.scr, local_pca), std::nullopt};
  if (!held.observations.empty())
    run.holdout_residual = mean_reprojection_residual(run.trained.model, held, cameras);
  return run;
}

inline std::vector<io::QueryResult> run_localize(const SceneData& d,
                                                 const LocalizationModels& models,
                                                 const RetrievalIndex& index,
                                                 const PipelineConfig& cfg) {
  const auto globals = index_globals(index);
  const SearchMode mode = index.pq ? SearchMode::kPq : SearchMode::kExact;
  std::vector<io::QueryResult> out;
  for (const auto& q : d.query) {
    io::QueryResult r;
    r.id = q.id;
    r.result = localize_query(d.features.at(q.id), d.observations.at(q.id).locals,
                              q.intrinsics, models, index, globals,
                              static_cast<std::size_t>(cfg.localize.hypotheses), cfg.ransac,
                              mode);
    out.push_back(std::move(r));
  }
  return out;
}

inline ThresholdTable run_eval(const SceneData& d, const std::vector<io::QueryResult>& results,
                               const std::vector<ErrorThreshold>& thresholds,
                               bool aliased_only = false) {
  PoseEstimates est;
  std::map<ImageId, Pose> truth;
  std::map<ImageId, Pose> all_truth;
  for (const auto& q : d.query) all_truth[q.id] = q.pose;
  for (const auto& r : results) {
    SCRK_CHECK(all_truth.count(r.id), Errc::kIdMismatch,
               "result for unknown query " + std::to_string(r.id));
    if (aliased_only && !d.aliased.count(r.id)) continue;
    est[r.id] = r.result ? std::optional<Pose>(r.result->pose) : std::nullopt;
    truth[r.id] = all_truth[r.id];
  }
  return accuracy_at_thresholds(est, truth, thresholds);
}

inline std::vector<QueryDescriptor> query_descriptors(const SceneData& d,
                                                      const AggregatorModel& model,
                                                      const PcaModel& pca) {
  std::vector<QueryDescriptor> out;
  for (const auto& q : d.query)
    out.push_back({global_descriptor(d.features.at(q.id), model, pca), q.pose});
  return out;
}

inline std::map<ImageId, Pose> pose_map(const std::vector<CameraEntry>& cams) {
  std::map<ImageId, Pose> m;
  for (const auto& c : cams) m[c.id] = c.pose;
  return m;
}

// ---------------------------------------------------------------------------
// Run manifest

struct ManifestFile {
  std::string role;  // "in" or "out"
  std::filesystem::path path;
};

inline std::string file_version(const std::string& bytes) {
  if (bytes.size() >= 10 && bytes.compare(0, 5, "SCRK-") == 0) {
    const unsigned v = static_cast<unsigned char>(bytes[8]) |
                       (static_cast<unsigned char>(bytes[9]) << 8);
    return bytes.substr(0, 8) + " v" + std::to_string(v);
  }
  const auto nl = bytes.find('\n');
  const std::string first = bytes.substr(0, nl);
  if (first.rfind("# covis v", 0) == 0 || first.rfind("# results v", 0) == 0) return first.substr(2);
  return "text";
}

inline std::string manifest(const std::string& stage, const PipelineConfig& cfg,
                            std::uint64_t seed, const std::vector<ManifestFile>& files) {
  char buf[64];
  std::string out = "stage " + stage + "\n";
  std::snprintf(buf, sizeof(buf), "config_hash %016" PRIx64 "\n",
                io::content_hash(serialize_config(cfg)));
  out += buf;
  out += "seed " + std::to_string(seed) + "\n";
  for (const auto& f : files) {
    std::vector<std::filesystem::path> paths;
    if (std::filesystem::is_directory(f.path)) {
      for (const auto& e : std::filesystem::directory_iterator(f.path))
        if (e.is_regular_file()) paths.push_back(e.path());
      std::sort(paths.begin(), paths.end());
    } else {
      paths.push_back(f.path);
    }
    for (const auto& p : paths) {
      const std::string bytes = io::read_file(p);
      std::snprintf(buf, sizeof(buf), "%016" PRIx64, io::content_hash(bytes));
      out += f.role + " " + p.string() + " " + file_version(bytes) + " " + buf + "\n";
    }
  }
  return out;
}

}  // namespace scrk
