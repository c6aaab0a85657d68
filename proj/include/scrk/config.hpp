#pragma once

#include <charconv>
#include <cstdio>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "scrk/aggregator.hpp"
#include "scrk/covis.hpp"
#include "scrk/error.hpp"
#include "scrk/evalkit.hpp"
#include "scrk/localize.hpp"
#include "scrk/scr.hpp"
#include "scrk/synthgen.hpp"

namespace scrk {

struct LocalizeConfig {
  int hypotheses = 10;
  bool use_pq = true;
  PqOptions pq;
  int local_dim = 128;
};

struct EvalConfig {
  std::vector<ErrorThreshold> thresholds{{0.1, 1.0}, {0.25, 2.0}, {0.5, 5.0}, {5.0, 10.0}};
  int k_max = 10;
  int recall_k = 5;
  int random_trials = 100;
};

struct PipelineConfig {
  SceneConfig scene;
  OverlapConfig covis;
  AggTrainConfig aggregator;
  ScrTrainConfig scr;
  RansacConfig ransac;
  LocalizeConfig localize;
  EvalConfig eval;
  std::uint64_t covis_seed = 0;

  // Every stage seed follows the one pipeline seed.
  void set_seed(std::uint64_t seed) {
    scene.seed = seed;
    covis_seed = seed;
    aggregator.seed = seed;
    scr.seed = seed;
    ransac.seed = seed;
    localize.pq.seed = seed;
  }
};

namespace detail {

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

template <typename T>
T parse_number(const std::string& s, const std::string& key) {
  T v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  SCRK_CHECK(res.ec == std::errc() && res.ptr == s.data() + s.size(), Errc::kParseError,
             "config key '" + key + "': bad value '" + s + "'");
  return v;
}

inline bool parse_bool(const std::string& s, const std::string& key) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw Error(Errc::kParseError, "config key '" + key + "': expected true/false, got '" + s + "'");
}

struct ConfigField {
  std::string section;
  std::string key;
  std::function<std::string(const PipelineConfig&)> get;
  std::function<void(PipelineConfig&, const std::string&)> set;
};

template <typename T, typename Access>
ConfigField number_field(std::string section, std::string key, Access access) {
  const std::string full = section + "." + key;
  ConfigField f{std::move(section), std::move(key), nullptr, nullptr};
  f.get = [access](const PipelineConfig& c) {
    const T v = access(const_cast<PipelineConfig&>(c));
    if constexpr (std::is_floating_point_v<T>) return fmt_double(v);
    else return std::to_string(v);
  };
  f.set = [access, full](PipelineConfig& c, const std::string& s) {
    access(c) = parse_number<T>(s, full);
  };
  return f;
}

template <typename Access>
ConfigField bool_field(std::string section, std::string key, Access access) {
  const std::string full = section + "." + key;
  ConfigField f{std::move(section), std::move(key), nullptr, nullptr};
  f.get = [access](const PipelineConfig& c) {
    return std::string(access(const_cast<PipelineConfig&>(c)) ? "true" : "false");
  };
  f.set = [access, full](PipelineConfig& c, const std::string& s) {
    access(c) = parse_bool(s, full);
  };
  return f;
}

inline std::string format_thresholds(const std::vector<ErrorThreshold>& ts) {
  std::string out;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    if (i) out += ",";
    out += fmt_double(ts[i].translation) + "/" + fmt_double(ts[i].rotation_deg);
  }
  return out;
}

inline std::vector<ErrorThreshold> parse_thresholds(const std::string& s) {
  std::vector<ErrorThreshold> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    std::size_t end = s.find(',', start);
    if (end == std::string::npos) end = s.size();
    const std::string item = s.substr(start, end - start);
    const auto slash = item.find('/');
    SCRK_CHECK(slash != std::string::npos, Errc::kParseError,
               "eval.thresholds: expected 'meters/degrees', got '" + item + "'");
    out.push_back({parse_number<double>(item.substr(0, slash), "eval.thresholds"),
                   parse_number<double>(item.substr(slash + 1), "eval.thresholds")});
    start = end + 1;
    if (end == s.size()) break;
  }
  return out;
}

#define SCRK_NUM(T, sec, key, expr) \
  number_field<T>(sec, key, [](PipelineConfig& c) -> T& { return expr; })
#define SCRK_BOOL(sec, key, expr) \
  bool_field(sec, key, [](PipelineConfig& c) -> bool& { return expr; })

inline const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> v{
        SCRK_NUM(int, "scene", "landmarks", c.scene.landmarks),
        SCRK_NUM(int, "scene", "regions", c.scene.regions),
        SCRK_NUM(double, "scene", "aliased_fraction", c.scene.aliased_fraction),
        SCRK_NUM(int, "scene", "train_cameras", c.scene.train_cameras),
        SCRK_NUM(int, "scene", "query_cameras", c.scene.query_cameras),
        SCRK_NUM(int, "scene", "width", c.scene.width),
        SCRK_NUM(int, "scene", "height", c.scene.height),
        SCRK_NUM(double, "scene", "focal", c.scene.focal),
        SCRK_NUM(double, "scene", "sigma_local", c.scene.sigma_local),
        SCRK_NUM(double, "scene", "sigma_feat", c.scene.sigma_feat),
        SCRK_NUM(double, "scene", "pixel_noise", c.scene.pixel_noise),
        SCRK_NUM(int, "scene", "tokens", c.scene.tokens),
        SCRK_NUM(int, "scene", "raw_local_dim", c.scene.raw_local_dim),
        SCRK_NUM(int, "scene", "feat_dim", c.scene.feat_dim),
        SCRK_NUM(double, "scene", "region_spacing", c.scene.region_spacing),
        SCRK_NUM(double, "scene", "region_half_width", c.scene.region_half_width),
        SCRK_NUM(double, "scene", "region_half_height", c.scene.region_half_height),
        SCRK_NUM(double, "scene", "facade_depth", c.scene.facade_depth),
        SCRK_NUM(double, "scene", "facade_jitter", c.scene.facade_jitter),
        SCRK_NUM(std::uint64_t, "scene", "seed", c.scene.seed),

        SCRK_NUM(int, "covis", "samples_per_image", c.covis.samples_per_image),
        SCRK_NUM(int, "covis", "depths_per_pixel", c.covis.depths_per_pixel),
        SCRK_NUM(double, "covis", "depth_min", c.covis.depth_min),
        SCRK_NUM(double, "covis", "depth_max", c.covis.depth_max),
        SCRK_NUM(double, "covis", "edge_threshold", c.covis.edge_threshold),
        SCRK_NUM(std::uint64_t, "covis", "seed", c.covis_seed),

        SCRK_NUM(int, "aggregator", "proj_dim", c.aggregator.dims.proj_dim),
        SCRK_NUM(int, "aggregator", "clusters", c.aggregator.dims.clusters),
        SCRK_NUM(int, "aggregator", "global_dim", c.aggregator.global_dim),
        SCRK_NUM(int, "aggregator", "iterations", c.aggregator.iterations),
        SCRK_NUM(int, "aggregator", "band_size", c.aggregator.band_size),
        SCRK_NUM(double, "aggregator", "margin", c.aggregator.margin),
        SCRK_NUM(double, "aggregator", "positive_threshold", c.aggregator.bands.positive),
        SCRK_NUM(double, "aggregator", "soft_low", c.aggregator.bands.soft_low),
        SCRK_NUM(double, "aggregator", "soft_high", c.aggregator.bands.soft_high),
        SCRK_NUM(double, "aggregator", "learning_rate", c.aggregator.adam.learning_rate),
        SCRK_NUM(double, "aggregator", "weight_decay", c.aggregator.adam.weight_decay),
        SCRK_NUM(std::uint64_t, "aggregator", "seed", c.aggregator.seed),

        SCRK_NUM(int, "scr", "width", c.scr.width),
        SCRK_NUM(int, "scr", "blocks", c.scr.blocks),
        SCRK_NUM(std::size_t, "scr", "buffer_capacity", c.scr.buffer_capacity),
        SCRK_NUM(int, "scr", "batch_size", c.scr.batch_size),
        SCRK_NUM(int, "scr", "iterations", c.scr.iterations),
        SCRK_NUM(double, "scr", "lr_max", c.scr.lr_max),
        SCRK_NUM(double, "scr", "lr_min", c.scr.lr_min),
        SCRK_NUM(double, "scr", "warmup_fraction", c.scr.warmup_fraction),
        SCRK_NUM(double, "scr", "weight_decay", c.scr.adam.weight_decay),
        SCRK_NUM(double, "scr", "jitter_global", c.scr.jitter_global),
        SCRK_NUM(double, "scr", "jitter_local", c.scr.jitter_local),
        SCRK_NUM(int, "scr", "holdout_every", c.scr.holdout_every),
        SCRK_NUM(double, "scr", "switch_threshold", c.scr.robust.switch_threshold),
        SCRK_NUM(double, "scr", "clamp_scale", c.scr.robust.clamp_scale),
        SCRK_NUM(double, "scr", "blend_band", c.scr.robust.blend_band),
        SCRK_NUM(double, "scr", "nominal_depth", c.scr.robust.nominal_depth),
        SCRK_BOOL("scr", "zero_global", c.scr.zero_global),
        SCRK_NUM(std::uint64_t, "scr", "seed", c.scr.seed),

        SCRK_NUM(int, "ransac", "max_iterations", c.ransac.max_iterations),
        SCRK_NUM(double, "ransac", "inlier_threshold", c.ransac.inlier_threshold),
        SCRK_NUM(int, "ransac", "min_inliers", c.ransac.min_inliers),
        SCRK_NUM(int, "ransac", "refine_iterations", c.ransac.refine_iterations),
        SCRK_NUM(double, "ransac", "confidence", c.ransac.confidence),
        SCRK_NUM(std::uint64_t, "ransac", "seed", c.ransac.seed),

        SCRK_NUM(int, "localize", "hypotheses", c.localize.hypotheses),
        SCRK_BOOL("localize", "use_pq", c.localize.use_pq),
        SCRK_NUM(int, "localize", "pq_subspaces", c.localize.pq.subspaces),
        SCRK_NUM(int, "localize", "pq_centroids", c.localize.pq.centroids),
        SCRK_NUM(int, "localize", "pq_iterations", c.localize.pq.iterations),
        SCRK_NUM(std::uint64_t, "localize", "pq_seed", c.localize.pq.seed),
        SCRK_NUM(int, "localize", "local_dim", c.localize.local_dim),

        SCRK_NUM(int, "eval", "k_max", c.eval.k_max),
        SCRK_NUM(int, "eval", "recall_k", c.eval.recall_k),
        SCRK_NUM(int, "eval", "random_trials", c.eval.random_trials),
    };
    ConfigField th{"eval", "thresholds", nullptr, nullptr};
    th.get = [](const PipelineConfig& c) { return format_thresholds(c.eval.thresholds); };
    th.set = [](PipelineConfig& c, const std::string& s) {
      c.eval.thresholds = parse_thresholds(s);
    };
    v.push_back(std::move(th));

    ConfigField sup{"scr", "supervision", nullptr, nullptr};
    sup.get = [](const PipelineConfig& c) {
      return std::string(c.scr.supervision == Supervision::kCoordinates ? "coordinates"
                                                                        : "reprojection");
    };
    sup.set = [](PipelineConfig& c, const std::string& s) {
      SCRK_CHECK(s == "coordinates" || s == "reprojection", Errc::kParseError,
                 "scr.supervision: expected coordinates|reprojection, got '" + s + "'");
      c.scr.supervision = s == "coordinates" ? Supervision::kCoordinates
                                             : Supervision::kReprojection;
    };
    v.push_back(std::move(sup));

    ConfigField smp{"scr", "sampling", nullptr, nullptr};
    smp.get = [](const PipelineConfig& c) {
      return std::string(c.scr.sampling == BufferSampling::kFocus ? "focus" : "random");
    };
    smp.set = [](PipelineConfig& c, const std::string& s) {
      SCRK_CHECK(s == "focus" || s == "random", Errc::kParseError,
                 "scr.sampling: expected focus|random, got '" + s + "'");
      c.scr.sampling = s == "focus" ? BufferSampling::kFocus : BufferSampling::kRandom;
    };
    v.push_back(std::move(smp));
    return v;
  }();
  return fields;
}

#undef SCRK_NUM
#undef SCRK_BOOL

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

// key = value lines grouped under [section]; '#' starts a comment line.
inline PipelineConfig parse_config(const std::string& text,
                                   const std::string& source = "<config>") {
  PipelineConfig cfg;
  std::map<std::string, const detail::ConfigField*> lookup;
  for (const auto& f : detail::config_fields()) lookup[f.section + "." + f.key] = &f;
  std::string section;
  std::size_t line_no = 0, start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    ++line_no;
    const std::string line = detail::trim(text.substr(start, end - start));
    start = end + 1;
    const std::string where = source + ":" + std::to_string(line_no);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      SCRK_CHECK(line.back() == ']', Errc::kParseError, where + ": bad section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    SCRK_CHECK(eq != std::string::npos, Errc::kParseError, where + ": expected key = value");
    const std::string key = section + "." + detail::trim(line.substr(0, eq));
    auto it = lookup.find(key);
    SCRK_CHECK(it != lookup.end(), Errc::kUnknownConfigKey, where + ": unknown key '" + key + "'");
    it->second->set(cfg, detail::trim(line.substr(eq + 1)));
  }
  return cfg;
}

// Canonical form: fixed section/key order, full-precision numbers.
inline std::string serialize_config(const PipelineConfig& cfg) {
  std::vector<std::string> order;
  std::map<std::string, std::string> body;
  for (const auto& f : detail::config_fields()) {
    if (!body.count(f.section)) order.push_back(f.section);
    body[f.section] += f.key + " = " + f.get(cfg) + "\n";
  }
  std::string out;
  for (const auto& s : order) out += (out.empty() ? "[" : "\n[") + s + "]\n" + body[s];
  return out;
}

}  // namespace scrk
