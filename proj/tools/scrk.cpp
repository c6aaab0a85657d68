// Command-line front end: one subcommand per pipeline stage.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "scrk/config.hpp"
#include "scrk/error.hpp"
#include "scrk/evalkit.hpp"
#include "scrk/io.hpp"
#include "scrk/pipeline.hpp"

namespace fs = std::filesystem;
using namespace scrk;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "pipeline config file ([section] key = value)");
  cmd->add_option("--seed", c.seed, "override every stage seed");
}

PipelineConfig load_config(const Common& c, std::uint64_t& seed_out) {
  PipelineConfig cfg;
  if (!c.config.empty()) cfg = parse_config(io::read_file(c.config), c.config);
  if (c.seed) cfg.set_seed(*c.seed);
  seed_out = c.seed ? *c.seed : cfg.scene.seed;
  return cfg;
}

void print_warnings(const std::vector<std::string>& w) {
  for (const auto& s : w) std::cerr << "warning: " << s << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scene-coordinate-regression localization toolkit"};
  app.require_subcommand(1);

  Common common;
  std::string in_dir, out_path, graph_path, agg_path, scr_path, index_path, results_path,
      curve_path;
  bool aliased_only = false, csv = false;

  auto* synth = app.add_subcommand("synth", "generate a synthetic scene directory");
  add_common(synth, common);
  synth->add_option("--out", out_path, "output scene directory")->required();

  auto* covis = app.add_subcommand("covis", "build the covisibility graph of training images");
  add_common(covis, common);
  covis->add_option("--in", in_dir, "scene directory")->required();
  covis->add_option("--out", out_path, "graph file")->required();

  auto* tagg = app.add_subcommand("train-agg", "train the global aggregator and index");
  add_common(tagg, common);
  tagg->add_option("--in", in_dir, "scene directory")->required();
  tagg->add_option("--graph", graph_path, "covisibility graph file")->required();
  tagg->add_option("--out", out_path, "aggregator model file")->required();
  tagg->add_option("--index", index_path, "retrieval index file")->required();

  auto* tscr = app.add_subcommand("train-scr", "train the scene coordinate regressor");
  add_common(tscr, common);
  tscr->add_option("--in", in_dir, "scene directory")->required();
  tscr->add_option("--agg", agg_path, "aggregator model file")->required();
  tscr->add_option("--out", out_path, "regressor model file")->required();

  auto* loc = app.add_subcommand("localize", "localize every query image");
  add_common(loc, common);
  loc->add_option("--in", in_dir, "scene directory")->required();
  loc->add_option("--agg", agg_path, "aggregator model file")->required();
  loc->add_option("--scr", scr_path, "regressor model file")->required();
  loc->add_option("--index", index_path, "retrieval index file")->required();
  loc->add_option("--out", out_path, "results file")->required();

  auto* ev = app.add_subcommand("eval", "accuracy at pose-error thresholds");
  add_common(ev, common);
  ev->add_option("--in", in_dir, "scene directory")->required();
  ev->add_option("--results", results_path, "results file")->required();
  ev->add_flag("--aliased-only", aliased_only, "restrict to queries seeing aliased landmarks");
  ev->add_flag("--csv", csv, "comma-separated output");

  auto* rs = app.add_subcommand("retrieval-stats", "retrieval error curve and recall");
  add_common(rs, common);
  rs->add_option("--in", in_dir, "scene directory")->required();
  rs->add_option("--agg", agg_path, "aggregator model file")->required();
  rs->add_option("--index", index_path, "retrieval index file")->required();
  rs->add_option("--curve", curve_path, "write the learned curve as two-column text");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    std::uint64_t seed = 0;
    const PipelineConfig cfg = load_config(common, seed);
    std::vector<std::string> warnings;
    std::vector<ManifestFile> files;
    if (!common.config.empty()) files.push_back({"in", common.config});
    std::string stage;

    if (*synth) {
      stage = "synth";
      write_scene(out_path, synthesize_scene(cfg.scene));
      files.push_back({"out", out_path});
    } else if (*covis) {
      stage = "covis";
      const SceneData d = read_scene(in_dir, &warnings);
      io::write_graph(out_path, run_covis(d, cfg));
      files.push_back({"in", in_dir});
      files.push_back({"out", out_path});
    } else if (*tagg) {
      stage = "train-agg";
      const SceneData d = read_scene(in_dir, &warnings);
      const CovisGraph g = io::read_graph(graph_path);
      const TrainedAggregator agg = run_train_agg(d, g, cfg);
      io::write_aggregator(out_path, agg.model, agg.pca);
      io::write_index(index_path, run_build_index(d, agg.model, agg.pca, cfg));
      std::cout << "final_loss " << io::fmt17(agg.loss_trace.empty() ? 0.0 : agg.loss_trace.back())
                << "\n";
      files.push_back({"in", in_dir});
      files.push_back({"in", graph_path});
      files.push_back({"out", out_path});
      files.push_back({"out", index_path});
    } else if (*tscr) {
      stage = "train-scr";
      const SceneData d = read_scene(in_dir, &warnings);
      const auto agg = io::read_aggregator(agg_path);
      const ScrRun run = run_train_scr(d, agg.model, agg.pca, cfg);
      const TrainedScr& scr = run.trained;
      io::write_scr(out_path, scr.model);
      std::cout << "final_loss " << io::fmt17(scr.loss_trace.empty() ? 0.0 : scr.loss_trace.back())
                << "\n";
      if (run.holdout_residual)
        std::cout << "holdout_residual_px " << io::fmt17(*run.holdout_residual) << "\n";
      files.push_back({"in", in_dir});
      files.push_back({"in", agg_path});
      files.push_back({"out", out_path});
    } else if (*loc) {
      stage = "localize";
      const SceneData d = read_scene(in_dir, &warnings);
      const auto agg = io::read_aggregator(agg_path);
      const LocalizationModels models{agg.model, agg.pca, io::read_scr(scr_path)};
      io::write_results(out_path, run_localize(d, models, io::read_index(index_path), cfg));
      files.push_back({"in", in_dir});
      files.push_back({"in", agg_path});
      files.push_back({"in", scr_path});
      files.push_back({"in", index_path});
      files.push_back({"out", out_path});
    } else if (*ev) {
      stage = "eval";
      const SceneData d = read_scene(in_dir, &warnings);
      const auto table =
          run_eval(d, io::read_results(results_path), cfg.eval.thresholds, aliased_only);
      const std::string label = aliased_only ? "aliased" : "all";
      std::cout << (csv ? render_table_csv(table, label) : render_table_text(table, label));
      std::cout << "queries " << table.query_count << "\n";
      files.push_back({"in", in_dir});
      files.push_back({"in", results_path});
    } else if (*rs) {
      stage = "retrieval-stats";
      const SceneData d = read_scene(in_dir, &warnings);
      const auto agg = io::read_aggregator(agg_path);
      const RetrievalIndex index = io::read_index(index_path);
      const auto queries = query_descriptors(d, agg.model, agg.pca);
      const auto train_poses = pose_map(d.train);
      const auto k_max = static_cast<std::size_t>(cfg.eval.k_max);
      const auto learned = retrieval_median_error(index, queries, train_poses, k_max);
      std::vector<Pose> qp;
      for (const auto& q : queries) qp.push_back(q.pose);
      const auto baseline = random_retrieval_curve(qp, train_poses, k_max,
                                                   cfg.eval.random_trials,
                                                   RngStream(seed, "random-retrieval"));
      std::printf("%-4s %12s %12s\n", "k", "learned", "random");
      for (std::size_t i = 0; i < learned.k.size(); ++i)
        std::printf("%-4zu %12.6f %12.6f\n", learned.k[i], learned.median_error[i],
                    baseline.median_error[i]);
      const auto rk = static_cast<std::size_t>(cfg.eval.recall_k);
      std::printf("recall@%zu %.6f\n", rk, recall_at_k(index, queries, train_poses, rk, rk));
      if (!curve_path.empty()) {
        io::write_file_atomic(curve_path, render_curve(learned));
        files.push_back({"out", curve_path});
      }
      files.push_back({"in", in_dir});
      files.push_back({"in", agg_path});
      files.push_back({"in", index_path});
    }
    print_warnings(warnings);
    std::cout << manifest(stage, cfg, seed, files);
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
