#include <gtest/gtest.h>

#include <filesystem>

#include "scrk/config.hpp"
#include "scrk/io.hpp"
#include "scrk/pipeline.hpp"

using namespace scrk;
namespace fs = std::filesystem;

namespace {

const char* kSmallConfig = R"(
[scene]
seed = 7
raw_local_dim = 32
feat_dim = 48
[covis]
depth_min = 4.5
depth_max = 9.5
[aggregator]
global_dim = 32
iterations = 30
[scr]
width = 32
blocks = 1
buffer_capacity = 4000
batch_size = 128
iterations = 30
[ransac]
min_inliers = 6
[localize]
local_dim = 16
)";

struct Artifacts {
  SceneData scene;
  CovisGraph graph;
  TrainedAggregator agg;
  RetrievalIndex index;
  ScrRun scr;
  std::vector<io::QueryResult> results;
};

Artifacts run_small_pipeline() {
  const PipelineConfig cfg = parse_config(kSmallConfig);
  Artifacts a;
  a.scene = synthesize_scene(cfg.scene);
  a.graph = run_covis(a.scene, cfg);
  a.agg = run_train_agg(a.scene, a.graph, cfg);
  a.index = run_build_index(a.scene, a.agg.model, a.agg.pca, cfg);
  a.scr = run_train_scr(a.scene, a.agg.model, a.agg.pca, cfg);
  a.results = run_localize(a.scene, {a.agg.model, a.agg.pca, a.scr.trained.model}, a.index, cfg);
  return a;
}

const Artifacts& artifacts() {
  static const Artifacts a = run_small_pipeline();
  return a;
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("scrk_shell_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return Errc::kInvalidArgument;
}

std::string with_version(std::string bytes, std::uint16_t v) {
  bytes[8] = static_cast<char>(v & 0xFF);
  bytes[9] = static_cast<char>(v >> 8);
  return bytes;
}

}  // namespace

TEST(Binary, DescriptorRoundTripIsBitwise) {
  RngStream rng(1, "dsc");
  io::DescriptorFile f;
  f.kind = io::DescriptorKind::kLocal;
  f.rows.resize(7, 5);
  for (Eigen::Index r = 0; r < 7; ++r) {
    f.ids.push_back(io::composite_id(r / 3, static_cast<std::uint32_t>(r % 3)));
    for (Eigen::Index c = 0; c < 5; ++c) f.rows(r, c) = round_f32(rng.normal());
  }
  const std::string bytes = io::encode_descriptors(f);
  EXPECT_EQ(bytes.substr(0, 8), "SCRK-DSC");
  const auto back = io::decode_descriptors(bytes, "mem");
  EXPECT_EQ(back, f);
  EXPECT_EQ(io::encode_descriptors(back), bytes);
}

TEST(Binary, DescriptorDuplicateIdsRejected) {
  io::DescriptorFile f;
  f.rows = Eigen::MatrixXd::Zero(2, 3);
  f.ids = {4, 4};
  EXPECT_EQ(code_of([&] { io::encode_descriptors(f); }), Errc::kDuplicateImageId);
}

TEST(Binary, BadMagicAndVersion) {
  io::DescriptorFile f;
  f.rows = Eigen::MatrixXd::Ones(1, 2);
  f.ids = {0};
  std::string bytes = io::encode_descriptors(f);
  std::string wrong = bytes;
  wrong[5] = 'X';
  EXPECT_EQ(code_of([&] { io::decode_descriptors(wrong, "mem"); }), Errc::kBadMagic);
  EXPECT_EQ(code_of([&] { io::decode_descriptors(with_version(bytes, 2), "mem"); }),
            Errc::kUnsupportedVersion);
  EXPECT_EQ(code_of([&] { io::decode_descriptors(bytes.substr(0, bytes.size() - 1), "mem"); }),
            Errc::kParseError);
  EXPECT_EQ(code_of([&] { io::decode_descriptors(bytes + "x", "mem"); }), Errc::kParseError);
  EXPECT_EQ(code_of([&] { io::decode_scr(bytes, "mem"); }), Errc::kBadMagic);
}

TEST(Binary, AggregatorRoundTrip) {
  const auto& a = artifacts();
  const std::string bytes = io::encode_aggregator(a.agg.model, a.agg.pca);
  const auto back = io::decode_aggregator(bytes, "mem");
  EXPECT_EQ(io::encode_aggregator(back.model, back.pca), bytes);
  EXPECT_EQ(back.model.flatten(), a.agg.model.flatten());
  const auto& feats = a.scene.features.at(a.scene.train.front().id);
  EXPECT_EQ(global_descriptor(feats, back.model, back.pca).values,
            global_descriptor(feats, a.agg.model, a.agg.pca).values);
  EXPECT_EQ(code_of([&] { io::decode_aggregator(with_version(bytes, 9), "mem"); }),
            Errc::kUnsupportedVersion);
}

TEST(Binary, ScrRoundTrip) {
  const auto& m = artifacts().scr.trained.model;
  const std::string bytes = io::encode_scr(m);
  const auto back = io::decode_scr(bytes, "mem");
  EXPECT_EQ(io::encode_scr(back), bytes);
  EXPECT_EQ(back.flatten(), m.flatten());
  EXPECT_EQ(back.center, m.center);
  EXPECT_EQ(back.scale, m.scale);
}

TEST(Binary, IndexRoundTripWithAndWithoutPq) {
  const auto& idx = artifacts().index;
  ASSERT_TRUE(idx.pq);
  const std::string bytes = io::encode_index(idx);
  const auto back = io::decode_index(bytes, "mem");
  EXPECT_EQ(io::encode_index(back), bytes);
  EXPECT_EQ(back.ids, idx.ids);
  EXPECT_EQ(back.entries, idx.entries);
  EXPECT_EQ(back.pq->codes, idx.pq->codes);
  const Eigen::VectorXd q = idx.entries.row(3).transpose();
  EXPECT_EQ(retrieve_topk(back, q, 5, SearchMode::kPq), retrieve_topk(idx, q, 5, SearchMode::kPq));

  RetrievalIndex plain = idx;
  plain.pq.reset();
  const auto back_plain = io::decode_index(io::encode_index(plain), "mem");
  EXPECT_FALSE(back_plain.pq);
  EXPECT_EQ(back_plain.entries, plain.entries);
}

TEST(Text, PosesRoundTripToFullPrecision) {
  const auto& train = artifacts().scene.train;
  const auto poses = io::encode_poses(train);
  const auto intr = io::encode_intrinsics(train);
  const auto back = io::decode_poses(poses, "p", intr, "i");
  ASSERT_EQ(back.size(), train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    EXPECT_EQ(back[i].id, train[i].id);
    EXPECT_EQ(back[i].pose.translation(), train[i].pose.translation());
    EXPECT_EQ(back[i].pose.rotation(), train[i].pose.rotation());
    EXPECT_EQ(back[i].intrinsics.fx, train[i].intrinsics.fx);
  }
  EXPECT_EQ(io::encode_poses(back), poses);
}

TEST(Text, PoseFileErrors) {
  const std::string intr = "# id fx fy cx cy width height\n1 500 500 320 240 640 480\n";
  EXPECT_EQ(code_of([&] { io::decode_poses("2 0 0 0 0 0 0 1\n", "p", intr, "i"); }),
            Errc::kMissingIntrinsics);
  EXPECT_EQ(code_of([&] { io::decode_poses("1 0 0 0 0 0 0 1.5\n", "p", intr, "i"); }),
            Errc::kNonUnitQuaternion);
  EXPECT_EQ(code_of([&] { io::decode_poses("1 0 0 0 0 0 0\n", "p", intr, "i"); }),
            Errc::kParseError);
  EXPECT_EQ(code_of([&] { io::decode_poses("1 0 0 0 0 0 0 1\n1 0 0 0 0 0 0 1\n", "p", intr, "i"); }),
            Errc::kParseError);
  std::vector<std::string> warnings;
  const auto cams = io::decode_poses("1 0 0 0 0 0 0 1.005\n", "p", intr, "i", &warnings);
  EXPECT_EQ(warnings.size(), 1u);
  EXPECT_NEAR(cams[0].pose.quaternion().norm(), 1.0, 1e-12);
}

TEST(Text, GraphRoundTrip) {
  const auto& g = artifacts().graph;
  const std::string text = io::encode_graph(g);
  EXPECT_EQ(text.substr(0, text.find('\n')), "# covis v1");
  const auto back = io::decode_graph(text, "g");
  EXPECT_EQ(back.nodes(), g.nodes());
  EXPECT_EQ(io::encode_graph(back), text);
  EXPECT_EQ(code_of([&] { io::decode_graph("# covis v2\n", "g"); }), Errc::kUnsupportedVersion);
  EXPECT_EQ(code_of([&] { io::decode_graph("# covis v1\n0 1\n", "g"); }), Errc::kParseError);
}

TEST(Text, ResultsRoundTrip) {
  const auto& results = artifacts().results;
  const std::string text = io::encode_results(results);
  const auto back = io::decode_results(text, "r");
  ASSERT_EQ(back.size(), results.size());
  EXPECT_EQ(io::encode_results(back), text);
  for (std::size_t i = 0; i < back.size(); ++i) {
    ASSERT_EQ(back[i].result.has_value(), results[i].result.has_value());
    if (back[i].result) {
      EXPECT_EQ(back[i].result->pose.translation(), results[i].result->pose.translation());
      EXPECT_EQ(back[i].result->inliers, results[i].result->inliers);
    }
  }
  EXPECT_EQ(code_of([&] { io::decode_results("# results v0\n", "r"); }),
            Errc::kUnsupportedVersion);
}

TEST(Text, SceneDirectoryRoundTrip) {
  const auto& s = artifacts().scene;
  const fs::path dir = temp_dir("scene");
  write_scene(dir, s);
  const SceneData back = read_scene(dir);
  EXPECT_EQ(back.aliased, s.aliased);
  ASSERT_EQ(back.observations.size(), s.observations.size());
  for (const auto& [id, o] : s.observations) {
    const auto& b = back.observations.at(id);
    ASSERT_EQ(b.locals.size(), o.locals.size());
    for (std::size_t k = 0; k < o.locals.size(); ++k) {
      EXPECT_EQ(b.locals[k].keypoint, o.locals[k].keypoint);
      EXPECT_EQ(b.locals[k].values, o.locals[k].values);
      EXPECT_EQ(b.gt[k], o.gt[k]);
    }
  }
  for (ImageId id : s.features.ids())
    EXPECT_EQ(back.features.at(id).tokens, s.features.at(id).tokens);
  fs::remove_all(dir);
}

TEST(Files, AtomicWriteAndMissingFile) {
  const fs::path dir = temp_dir("files");
  io::write_file_atomic(dir / "a.txt", "hello");
  EXPECT_EQ(io::read_file(dir / "a.txt"), "hello");
  io::write_file_atomic(dir / "a.txt", "bye");
  EXPECT_EQ(io::read_file(dir / "a.txt"), "bye");
  EXPECT_EQ(code_of([&] { io::read_file(dir / "missing"); }), Errc::kIoError);
  fs::remove_all(dir);
}

TEST(Config, ParseSerializeRoundTrip) {
  const PipelineConfig a = parse_config(kSmallConfig);
  EXPECT_EQ(a.scene.seed, 7u);
  EXPECT_EQ(a.scr.width, 32);
  EXPECT_EQ(a.covis.depth_min, 4.5);
  const std::string text = serialize_config(a);
  EXPECT_EQ(serialize_config(parse_config(text)), text);
  EXPECT_EQ(serialize_config(parse_config("")), serialize_config(PipelineConfig{}));
}

TEST(Config, Errors) {
  EXPECT_EQ(code_of([] { parse_config("[scene]\nbogus = 1\n"); }), Errc::kUnknownConfigKey);
  EXPECT_EQ(code_of([] { parse_config("landmarks = 5\n"); }), Errc::kUnknownConfigKey);
  EXPECT_EQ(code_of([] { parse_config("[scene]\nlandmarks\n"); }), Errc::kParseError);
  EXPECT_EQ(code_of([] { parse_config("[scene]\nlandmarks = many\n"); }), Errc::kParseError);
  EXPECT_EQ(code_of([] { parse_config("[scr]\nsupervision = magic\n"); }), Errc::kParseError);
  EXPECT_EQ(code_of([] { parse_config("[scene\n"); }), Errc::kParseError);
}

TEST(Config, SetSeedPropagates) {
  PipelineConfig c;
  c.set_seed(99);
  EXPECT_EQ(c.scene.seed, 99u);
  EXPECT_EQ(c.covis_seed, 99u);
  EXPECT_EQ(c.aggregator.seed, 99u);
  EXPECT_EQ(c.scr.seed, 99u);
  EXPECT_EQ(c.ransac.seed, 99u);
  EXPECT_EQ(c.localize.pq.seed, 99u);
}

TEST(Errors, ExitCodes) {
  EXPECT_EQ(exit_code_for(Errc::kUnknownConfigKey), 1);
  EXPECT_EQ(exit_code_for(Errc::kInfeasibleConfig), 1);
  EXPECT_EQ(exit_code_for(Errc::kBadMagic), 2);
  EXPECT_EQ(exit_code_for(Errc::kIdMismatch), 2);
  EXPECT_EQ(exit_code_for(Errc::kNonFiniteLoss), 3);
  EXPECT_EQ(std::string(Error(Errc::kKTooLarge, "x").what()), "KTooLarge: x");
}

TEST(Manifest, ListsStageSeedAndVersions) {
  const fs::path dir = temp_dir("manifest");
  io::write_graph(dir / "g.txt", artifacts().graph);
  io::write_index(dir / "i.bin", artifacts().index);
  const std::string m = manifest("covis", PipelineConfig{}, 5,
                                 {{"out", dir / "g.txt"}, {"out", dir / "i.bin"}});
  EXPECT_EQ(m.rfind("stage covis\n", 0), 0u);
  EXPECT_NE(m.find("seed 5"), std::string::npos);
  EXPECT_NE(m.find("covis v1"), std::string::npos);
  EXPECT_NE(m.find("SCRK-IDX v1"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Pipeline, SmallRunIsBitwiseDeterministic) {
  const auto& a = artifacts();
  const Artifacts b = run_small_pipeline();
  EXPECT_EQ(io::encode_graph(b.graph), io::encode_graph(a.graph));
  EXPECT_EQ(b.agg.loss_trace, a.agg.loss_trace);
  EXPECT_EQ(io::encode_aggregator(b.agg.model, b.agg.pca),
            io::encode_aggregator(a.agg.model, a.agg.pca));
  EXPECT_EQ(io::encode_index(b.index), io::encode_index(a.index));
  EXPECT_EQ(io::encode_scr(b.scr.trained.model), io::encode_scr(a.scr.trained.model));
  EXPECT_EQ(io::encode_results(b.results), io::encode_results(a.results));
}

TEST(Pipeline, EvalCoversEveryQuery) {
  const auto& a = artifacts();
  const auto all = run_eval(a.scene, a.results, PipelineConfig{}.eval.thresholds);
  EXPECT_EQ(all.query_count, a.scene.query.size());
  const auto aliased = run_eval(a.scene, a.results, PipelineConfig{}.eval.thresholds, true);
  EXPECT_LE(aliased.query_count, all.query_count);
  std::vector<io::QueryResult> stray = a.results;
  stray.push_back({123456, std::nullopt});
  EXPECT_EQ(code_of([&] { run_eval(a.scene, stray, PipelineConfig{}.eval.thresholds); }),
            Errc::kIdMismatch);
}
