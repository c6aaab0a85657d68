#pragma once

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "scrk/aggregator.hpp"
#include "scrk/covis.hpp"
#include "scrk/error.hpp"
#include "scrk/geometry.hpp"
#include "scrk/localize.hpp"
#include "scrk/numeric.hpp"
#include "scrk/scr.hpp"

namespace scrk::io {

inline constexpr std::uint16_t kDescriptorVersion = 1;
inline constexpr std::uint16_t kAggregatorVersion = 1;
inline constexpr std::uint16_t kScrVersion = 1;
inline constexpr std::uint16_t kIndexVersion = 1;
inline constexpr std::string_view kGraphHeader = "# covis v1";
inline constexpr std::string_view kResultHeader = "# results v1";

// ---------------------------------------------------------------------------
// Raw file access

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  SCRK_CHECK(in.good(), Errc::kIoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Writes to a sibling temp file, then renames over the target.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    SCRK_CHECK(out.good(), Errc::kIoError, "cannot write " + tmp.string());
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    SCRK_CHECK(out.good(), Errc::kIoError, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  SCRK_CHECK(!ec, Errc::kIoError, "rename to " + path.string() + ": " + ec.message());
}

// ---------------------------------------------------------------------------
// Little-endian binary encoding

class Writer {
 public:
  void bytes(std::string_view s) { buf_.append(s); }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }

  template <typename Derived>
  void f32_block(const Eigen::DenseBase<Derived>& m) {  // row-major
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) f32(m(r, c));
  }

  const std::string& data() const { return buf_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string data, std::string source)
      : data_(std::move(data)), source_(std::move(source)) {}

  void expect_magic(std::string_view magic) {
    need(magic.size());
    SCRK_CHECK(std::string_view(data_).substr(pos_, magic.size()) == magic,
               Errc::kBadMagic, source_ + ": expected magic " + std::string(magic));
    pos_ += magic.size();
  }
  void expect_version(std::uint16_t supported) {
    const auto v = u16();
    SCRK_CHECK(v == supported, Errc::kUnsupportedVersion,
               source_ + ": unsupported version " + std::to_string(v) + " (expected " +
                   std::to_string(supported) + ")");
  }
  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }

  Eigen::MatrixXd f32_block(Eigen::Index rows, Eigen::Index cols) {
    need(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) * 4);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = f32();
    return m;
  }
  Eigen::VectorXd f32_vector(Eigen::Index n) { return f32_block(n, 1); }

  void expect_end() const {
    SCRK_CHECK(pos_ == data_.size(), Errc::kParseError,
               source_ + ": " + std::to_string(data_.size() - pos_) + " trailing bytes");
  }
  const std::string& source() const { return source_; }

 private:
  void need(std::size_t n) const {
    SCRK_CHECK(data_.size() - pos_ >= n, Errc::kParseError, source_ + ": truncated file");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string data_;
  std::string source_;
  std::size_t pos_ = 0;
};

inline void put_pca(Writer& w, const PcaModel& p) {
  w.u32(static_cast<std::uint32_t>(p.in_dim()));
  w.u32(static_cast<std::uint32_t>(p.out_dim()));
  w.f32_block(p.mean.transpose());
  w.f32_block(p.components);
}

inline PcaModel get_pca(Reader& r) {
  const auto in = r.u32();
  const auto out = r.u32();
  PcaModel p;
  p.mean = r.f32_vector(in);
  p.components = r.f32_block(out, in);
  return p;
}

// ---------------------------------------------------------------------------
// Descriptor files

enum class DescriptorKind : std::uint8_t { kLocal = 0, kGlobal = 1, kFeatureTokens = 2 };

struct DescriptorFile {
  DescriptorKind kind = DescriptorKind::kGlobal;
  Eigen::MatrixXd rows;            // count x dim
  std::vector<std::uint64_t> ids;  // per row

  bool operator==(const DescriptorFile& o) const {
    return kind == o.kind && ids == o.ids && rows.rows() == o.rows.rows() &&
           rows.cols() == o.rows.cols() && rows == o.rows;
  }
};

inline std::uint64_t composite_id(ImageId image, std::uint32_t index) {
  return (static_cast<std::uint64_t>(image) << 32) | index;
}
inline ImageId composite_image(std::uint64_t id) { return static_cast<ImageId>(id >> 32); }
inline std::uint32_t composite_index(std::uint64_t id) {
  return static_cast<std::uint32_t>(id & 0xFFFFFFFFu);
}

inline std::string encode_descriptors(const DescriptorFile& f) {
  SCRK_CHECK(static_cast<std::size_t>(f.rows.rows()) == f.ids.size(),
             Errc::kDimensionMismatch, "descriptor rows and ids differ in count");
  std::vector<std::uint64_t> sorted = f.ids;
  std::sort(sorted.begin(), sorted.end());
  SCRK_CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(),
             Errc::kDuplicateImageId, "descriptor ids not unique");
  Writer w;
  w.bytes("SCRK-DSC");
  w.u16(kDescriptorVersion);
  w.u32(static_cast<std::uint32_t>(f.rows.rows()));
  w.u32(static_cast<std::uint32_t>(f.rows.cols()));
  w.u8(static_cast<std::uint8_t>(f.kind));
  w.f32_block(f.rows);
  for (auto id : f.ids) w.u64(id);
  return w.data();
}

inline DescriptorFile decode_descriptors(std::string data, std::string source) {
  Reader r(std::move(data), std::move(source));
  r.expect_magic("SCRK-DSC");
  r.expect_version(kDescriptorVersion);
  const auto count = r.u32();
  const auto dim = r.u32();
  const auto kind = r.u8();
  SCRK_CHECK(kind <= 2, Errc::kParseError, r.source() + ": unknown descriptor kind");
  DescriptorFile f;
  f.kind = static_cast<DescriptorKind>(kind);
  f.rows = r.f32_block(count, dim);
  for (std::uint32_t i = 0; i < count; ++i) f.ids.push_back(r.u64());
  r.expect_end();
  return f;
}

inline void write_descriptors(const std::filesystem::path& p, const DescriptorFile& f) {
  write_file_atomic(p, encode_descriptors(f));
}
inline DescriptorFile read_descriptors(const std::filesystem::path& p) {
  return decode_descriptors(read_file(p), p.string());
}

inline DescriptorFile features_to_file(const std::vector<VisualFeatureMap>& maps) {
  DescriptorFile f;
  f.kind = DescriptorKind::kFeatureTokens;
  Eigen::Index total = 0, dim = maps.empty() ? 0 : maps.front().tokens.cols();
  for (const auto& m : maps) total += m.tokens.rows();
  f.rows.resize(total, dim);
  Eigen::Index r = 0;
  for (const auto& m : maps) {
    SCRK_CHECK(m.tokens.cols() == dim, Errc::kDimensionMismatch, "token dims differ");
    for (Eigen::Index t = 0; t < m.tokens.rows(); ++t, ++r) {
      f.rows.row(r) = m.tokens.row(t);
      f.ids.push_back(composite_id(m.image_id, static_cast<std::uint32_t>(t)));
    }
  }
  return f;
}

inline FeatureStore features_from_file(const DescriptorFile& f) {
  SCRK_CHECK(f.kind == DescriptorKind::kFeatureTokens, Errc::kParseError,
             "descriptor file does not hold feature tokens");
  std::map<ImageId, std::vector<std::pair<std::uint32_t, Eigen::Index>>> by_image;
  for (std::size_t r = 0; r < f.ids.size(); ++r)
    by_image[composite_image(f.ids[r])].emplace_back(composite_index(f.ids[r]),
                                                      static_cast<Eigen::Index>(r));
  FeatureStore store;
  for (auto& [id, rows] : by_image) {
    std::sort(rows.begin(), rows.end());
    VisualFeatureMap m;
    m.image_id = id;
    m.tokens.resize(static_cast<Eigen::Index>(rows.size()), f.rows.cols());
    for (std::size_t t = 0; t < rows.size(); ++t) m.tokens.row(t) = f.rows.row(rows[t].second);
    store.add(std::move(m));
  }
  return store;
}

// ---------------------------------------------------------------------------
// Aggregator model

struct AggregatorFile {
  AggregatorModel model;
  PcaModel pca;
};

inline std::string encode_aggregator(const AggregatorModel& m, const PcaModel& pca) {
  Writer w;
  w.bytes("SCRK-AGG");
  w.u16(kAggregatorVersion);
  w.u32(static_cast<std::uint32_t>(m.dims.feat_dim));
  w.u32(static_cast<std::uint32_t>(m.dims.proj_dim));
  w.u32(static_cast<std::uint32_t>(m.dims.clusters));
  w.f32_block(m.flatten());
  put_pca(w, pca);
  return w.data();
}

inline AggregatorFile decode_aggregator(std::string data, std::string source) {
  Reader r(std::move(data), std::move(source));
  r.expect_magic("SCRK-AGG");
  r.expect_version(kAggregatorVersion);
  AggregatorDims dims;
  dims.feat_dim = static_cast<int>(r.u32());
  dims.proj_dim = static_cast<int>(r.u32());
  dims.clusters = static_cast<int>(r.u32());
  AggregatorFile f{AggregatorModel(dims), {}};
  f.model.unflatten(r.f32_vector(f.model.num_params()));
  f.pca = get_pca(r);
  r.expect_end();
  return f;
}

inline void write_aggregator(const std::filesystem::path& p, const AggregatorModel& m,
                             const PcaModel& pca) {
  write_file_atomic(p, encode_aggregator(m, pca));
}
inline AggregatorFile read_aggregator(const std::filesystem::path& p) {
  return decode_aggregator(read_file(p), p.string());
}

// ---------------------------------------------------------------------------
// SCR model

inline std::string encode_scr(const ScrModel& m) {
  Writer w;
  w.bytes("SCRK-SCR");
  w.u16(kScrVersion);
  w.u32(static_cast<std::uint32_t>(m.arch.global_dim));
  w.u32(static_cast<std::uint32_t>(m.arch.local_dim));
  w.u32(static_cast<std::uint32_t>(m.arch.width));
  w.u32(static_cast<std::uint32_t>(m.arch.blocks));
  w.u8(m.arch.zero_global ? 1 : 0);
  w.f32_block(m.center.transpose());
  w.f32(m.scale);
  put_pca(w, m.local_pca);
  w.f32_block(m.flatten());
  return w.data();
}

inline ScrModel decode_scr(std::string data, std::string source) {
  Reader r(std::move(data), std::move(source));
  r.expect_magic("SCRK-SCR");
  r.expect_version(kScrVersion);
  ScrArchitecture a;
  a.global_dim = static_cast<int>(r.u32());
  a.local_dim = static_cast<int>(r.u32());
  a.width = static_cast<int>(r.u32());
  a.blocks = static_cast<int>(r.u32());
  a.zero_global = r.u8() != 0;
  ScrModel m(a);
  m.center = r.f32_vector(3);
  m.scale = r.f32();
  m.local_pca = get_pca(r);
  m.unflatten(r.f32_vector(m.num_params()));
  r.expect_end();
  return m;
}

inline void write_scr(const std::filesystem::path& p, const ScrModel& m) {
  write_file_atomic(p, encode_scr(m));
}
inline ScrModel read_scr(const std::filesystem::path& p) {
  return decode_scr(read_file(p), p.string());
}

// ---------------------------------------------------------------------------
// Retrieval index

inline std::string encode_index(const RetrievalIndex& idx) {
  Writer w;
  w.bytes("SCRK-IDX");
  w.u16(kIndexVersion);
  w.u32(static_cast<std::uint32_t>(idx.dim()));
  w.u32(static_cast<std::uint32_t>(idx.size()));
  w.f32_block(idx.entries);
  for (ImageId id : idx.ids) w.u32(id);
  w.u8(idx.pq ? 1 : 0);
  if (idx.pq) {
    w.u32(static_cast<std::uint32_t>(idx.pq->subspaces));
    w.u32(static_cast<std::uint32_t>(idx.pq->centroids()));
    for (const auto& cb : idx.pq->codebooks) w.f32_block(cb);
    for (auto c : idx.pq->codes) w.u8(c);
  }
  return w.data();
}

inline RetrievalIndex decode_index(std::string data, std::string source) {
  Reader r(std::move(data), std::move(source));
  r.expect_magic("SCRK-IDX");
  r.expect_version(kIndexVersion);
  const auto dim = r.u32();
  const auto n = r.u32();
  RetrievalIndex idx;
  idx.entries = r.f32_block(n, dim);
  for (std::uint32_t i = 0; i < n; ++i) idx.ids.push_back(r.u32());
  if (r.u8() != 0) {
    PqCodebook pq;
    pq.subspaces = static_cast<int>(r.u32());
    const auto k = r.u32();
    SCRK_CHECK(pq.subspaces > 0 && dim % pq.subspaces == 0 && k >= 1 && k <= 256,
               Errc::kParseError, r.source() + ": invalid pq section");
    for (int m = 0; m < pq.subspaces; ++m)
      pq.codebooks.push_back(r.f32_block(k, dim / pq.subspaces));
    for (std::size_t i = 0; i < static_cast<std::size_t>(n) * pq.subspaces; ++i)
      pq.codes.push_back(r.u8());
    idx.pq = std::move(pq);
  }
  r.expect_end();
  return idx;
}

inline void write_index(const std::filesystem::path& p, const RetrievalIndex& idx) {
  write_file_atomic(p, encode_index(idx));
}
inline RetrievalIndex read_index(const std::filesystem::path& p) {
  return decode_index(read_file(p), p.string());
}

// ---------------------------------------------------------------------------
// Text helpers

inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct LineParser {
  std::string source;
  std::size_t line_no = 0;

  [[noreturn]] void fail(const std::string& what) const {
    throw Error(Errc::kParseError,
                source + ":" + std::to_string(line_no) + ": " + what);
  }

  std::vector<std::string_view> split(std::string_view line) const {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
      const std::size_t j = i;
      while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
      if (i > j) out.push_back(line.substr(j, i - j));
    }
    return out;
  }

  double to_double(std::string_view s) const {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v))
      fail("bad number '" + std::string(s) + "'");
    return v;
  }

  template <typename Int>
  Int to_int(std::string_view s) const {
    Int v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
      fail("bad integer '" + std::string(s) + "'");
    return v;
  }
};

// Calls f(fields, parser) for every non-empty, non-comment line.
template <typename F>
void for_each_record(const std::string& text, const std::string& source, F&& f) {
  LineParser p{source, 0};
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    ++p.line_no;
    const std::string_view line(text.data() + start, end - start);
    const auto fields = p.split(line);
    if (!fields.empty() && fields[0][0] != '#') f(fields, p);
    if (end == text.size()) break;
    start = end + 1;
  }
}

// ---------------------------------------------------------------------------
// Poses and intrinsics

inline std::string encode_poses(const std::vector<CameraEntry>& cams) {
  std::string out = "# id tx ty tz qx qy qz qw\n";
  for (const auto& c : cams) {
    const auto& t = c.pose.translation();
    const auto& q = c.pose.quaternion();
    out += std::to_string(c.id) + " " + fmt17(t.x()) + " " + fmt17(t.y()) + " " +
           fmt17(t.z()) + " " + fmt17(q.x()) + " " + fmt17(q.y()) + " " + fmt17(q.z()) +
           " " + fmt17(q.w()) + "\n";
  }
  return out;
}

inline std::string encode_intrinsics(const std::vector<CameraEntry>& cams) {
  std::string out = "# id fx fy cx cy width height\n";
  for (const auto& c : cams) {
    const auto& k = c.intrinsics;
    out += std::to_string(c.id) + " " + fmt17(k.fx) + " " + fmt17(k.fy) + " " +
           fmt17(k.cx) + " " + fmt17(k.cy) + " " + std::to_string(k.width) + " " +
           std::to_string(k.height) + "\n";
  }
  return out;
}

inline void write_poses(const std::filesystem::path& poses,
                        const std::filesystem::path& intrinsics,
                        const std::vector<CameraEntry>& cams) {
  write_file_atomic(poses, encode_poses(cams));
  write_file_atomic(intrinsics, encode_intrinsics(cams));
}

// Quaternions off unit norm by more than 1e-3 are normalized with a warning;
// beyond 1e-2 they are rejected.
inline std::vector<CameraEntry> decode_poses(const std::string& poses_text,
                                             const std::string& poses_source,
                                             const std::string& intr_text,
                                             const std::string& intr_source,
                                             std::vector<std::string>* warnings = nullptr) {
  std::map<ImageId, CameraIntrinsics> intr;
  for_each_record(intr_text, intr_source, [&](const auto& f, const LineParser& p) {
    if (f.size() != 7) p.fail("expected 'id fx fy cx cy width height'");
    CameraIntrinsics k{p.to_double(f[1]), p.to_double(f[2]), p.to_double(f[3]),
                       p.to_double(f[4]), p.template to_int<int>(f[5]),
                       p.template to_int<int>(f[6])};
    try {
      k.validate();
    } catch (const Error& e) {
      p.fail(e.what());
    }
    const auto id = p.template to_int<ImageId>(f[0]);
    if (!intr.emplace(id, k).second) p.fail("duplicate intrinsics id");
  });

  std::vector<CameraEntry> out;
  std::set<ImageId> seen;
  for_each_record(poses_text, poses_source, [&](const auto& f, const LineParser& p) {
    if (f.size() != 8) p.fail("expected 'id tx ty tz qx qy qz qw'");
    const auto id = p.template to_int<ImageId>(f[0]);
    if (!seen.insert(id).second) p.fail("duplicate image id " + std::to_string(id));
    const Eigen::Vector3d t(p.to_double(f[1]), p.to_double(f[2]), p.to_double(f[3]));
    const Eigen::Quaterniond q(p.to_double(f[7]), p.to_double(f[4]), p.to_double(f[5]),
                               p.to_double(f[6]));
    const double dev = std::abs(q.norm() - 1.0);
    if (dev > 1e-2)
      throw Error(Errc::kNonUnitQuaternion,
                  p.source + ":" + std::to_string(p.line_no) + ": quaternion norm " +
                      std::to_string(q.norm()));
    if (dev > 1e-3 && warnings)
      warnings->push_back(p.source + ":" + std::to_string(p.line_no) +
                          ": quaternion normalized (norm " + std::to_string(q.norm()) + ")");
    auto it = intr.find(id);
    if (it == intr.end())
      throw Error(Errc::kMissingIntrinsics, "no intrinsics for image " + std::to_string(id) +
                                                " in " + intr_source);
    out.push_back({id, Pose(q, t), it->second});
  });
  return out;
}

inline std::vector<CameraEntry> read_poses(const std::filesystem::path& poses,
                                           const std::filesystem::path& intrinsics,
                                           std::vector<std::string>* warnings = nullptr) {
  return decode_poses(read_file(poses), poses.string(), read_file(intrinsics),
                      intrinsics.string(), warnings);
}

// ---------------------------------------------------------------------------
// Covisibility graph

inline std::string encode_graph(const CovisGraph& g) {
  std::string out(kGraphHeader);
  out += "\n# nodes";
  for (ImageId id : g.nodes()) out += " " + std::to_string(id);
  out += "\n";
  char buf[32];
  for (const auto& e : g.edges()) {
    std::snprintf(buf, sizeof(buf), "%.6f", e.psi);
    out += std::to_string(e.i) + " " + std::to_string(e.j) + " " + buf + "\n";
  }
  return out;
}

inline CovisGraph decode_graph(const std::string& text, const std::string& source) {
  const auto nl = text.find('\n');
  SCRK_CHECK(text.substr(0, nl) == kGraphHeader, Errc::kUnsupportedVersion,
             source + ": expected header '" + std::string(kGraphHeader) + "'");
  CovisGraph g;
  LineParser p{source, 0};
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    ++p.line_no;
    const auto f = p.split(std::string_view(text).substr(start, end - start));
    start = end + 1;
    if (f.empty()) continue;
    if (f[0] == "#") {
      if (f.size() >= 2 && f[1] == "nodes")
        for (std::size_t i = 2; i < f.size(); ++i) g.add_node(p.to_int<ImageId>(f[i]));
      continue;
    }
    if (f[0][0] == '#') continue;
    if (f.size() != 3) p.fail("expected 'i j psi'");
    try {
      g.add_edge(p.to_int<ImageId>(f[0]), p.to_int<ImageId>(f[1]), p.to_double(f[2]));
    } catch (const Error& e) {
      p.fail(e.what());
    }
  }
  return g;
}

inline void write_graph(const std::filesystem::path& p, const CovisGraph& g) {
  write_file_atomic(p, encode_graph(g));
}
inline CovisGraph read_graph(const std::filesystem::path& p) {
  return decode_graph(read_file(p), p.string());
}

// ---------------------------------------------------------------------------
// Keypoints and ground-truth coordinates

struct ImageObservations {
  std::vector<LocalDescriptor> locals;                 // raw descriptors
  std::vector<std::optional<SceneCoordinate>> gt;      // per keypoint
};

using ObservationSet = std::map<ImageId, ImageObservations>;

inline std::string encode_keypoints(const ObservationSet& obs) {
  std::string out = "# image_id kp_index u v\n";
  for (const auto& [id, o] : obs)
    for (std::size_t i = 0; i < o.locals.size(); ++i)
      out += std::to_string(id) + " " + std::to_string(i) + " " +
             fmt17(o.locals[i].keypoint.x()) + " " + fmt17(o.locals[i].keypoint.y()) + "\n";
  return out;
}

inline std::string encode_ground_truth(const ObservationSet& obs) {
  std::string out = "# image_id kp_index x y z\n";
  for (const auto& [id, o] : obs)
    for (std::size_t i = 0; i < o.gt.size(); ++i)
      if (o.gt[i])
        out += std::to_string(id) + " " + std::to_string(i) + " " + fmt17(o.gt[i]->x()) +
               " " + fmt17(o.gt[i]->y()) + " " + fmt17(o.gt[i]->z()) + "\n";
  return out;
}

inline DescriptorFile locals_to_file(const ObservationSet& obs) {
  DescriptorFile f;
  f.kind = DescriptorKind::kLocal;
  Eigen::Index total = 0, dim = 0;
  for (const auto& [id, o] : obs) {
    total += static_cast<Eigen::Index>(o.locals.size());
    if (!o.locals.empty()) dim = o.locals.front().values.size();
  }
  f.rows.resize(total, dim);
  Eigen::Index r = 0;
  for (const auto& [id, o] : obs)
    for (std::size_t i = 0; i < o.locals.size(); ++i, ++r) {
      SCRK_CHECK(o.locals[i].values.size() == dim, Errc::kDimensionMismatch,
                 "local descriptor dims differ");
      f.rows.row(r) = o.locals[i].values.transpose();
      f.ids.push_back(composite_id(id, static_cast<std::uint32_t>(i)));
    }
  return f;
}

// Joins keypoints, local descriptors and (optional) ground truth by
// (image, keypoint index).
inline ObservationSet decode_observations(const std::string& kp_text,
                                          const std::string& kp_source,
                                          const DescriptorFile& locals,
                                          const std::optional<std::string>& gt_text,
                                          const std::string& gt_source) {
  SCRK_CHECK(locals.kind == DescriptorKind::kLocal, Errc::kParseError,
             "descriptor file does not hold local descriptors");
  std::map<std::uint64_t, Keypoint> kps;
  for_each_record(kp_text, kp_source, [&](const auto& f, const LineParser& p) {
    if (f.size() != 4) p.fail("expected 'image_id kp_index u v'");
    const auto key = composite_id(p.template to_int<ImageId>(f[0]),
                                  p.template to_int<std::uint32_t>(f[1]));
    if (!kps.emplace(key, Keypoint(p.to_double(f[2]), p.to_double(f[3]))).second)
      p.fail("duplicate keypoint");
  });
  std::map<std::uint64_t, SceneCoordinate> gts;
  if (gt_text)
    for_each_record(*gt_text, gt_source, [&](const auto& f, const LineParser& p) {
      if (f.size() != 5) p.fail("expected 'image_id kp_index x y z'");
      const auto key = composite_id(p.template to_int<ImageId>(f[0]),
                                    p.template to_int<std::uint32_t>(f[1]));
      gts[key] = SceneCoordinate(p.to_double(f[2]), p.to_double(f[3]), p.to_double(f[4]));
    });

  std::map<std::uint64_t, Eigen::Index> rows;
  for (std::size_t r = 0; r < locals.ids.size(); ++r)
    rows[locals.ids[r]] = static_cast<Eigen::Index>(r);
  SCRK_CHECK(rows.size() == kps.size(), Errc::kIdMismatch,
             kp_source + ": keypoint count differs from local descriptor count");
  ObservationSet out;
  for (const auto& [key, kp] : kps) {
    auto it = rows.find(key);
    SCRK_CHECK(it != rows.end(), Errc::kIdMismatch,
               kp_source + ": no descriptor for keypoint " +
                   std::to_string(composite_index(key)) + " of image " +
                   std::to_string(composite_image(key)));
    auto& o = out[composite_image(key)];
    SCRK_CHECK(composite_index(key) == o.locals.size(), Errc::kParseError,
               kp_source + ": keypoint indices must be contiguous from 0");
    o.locals.push_back({composite_image(key), kp, locals.rows.row(it->second).transpose()});
    auto g = gts.find(key);
    o.gt.push_back(g == gts.end() ? std::nullopt
                                  : std::optional<SceneCoordinate>(g->second));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Localization results

struct QueryResult {
  ImageId id = 0;
  std::optional<LocalizationResult> result;
};

inline std::string encode_results(const std::vector<QueryResult>& results) {
  std::string out(kResultHeader);
  out += "\n# id found tx ty tz qx qy qz qw inliers mean_residual hypothesis\n";
  for (const auto& q : results) {
    out += std::to_string(q.id);
    if (!q.result) {
      out += " 0\n";
      continue;
    }
    const auto& r = *q.result;
    const auto& t = r.pose.translation();
    const auto& qq = r.pose.quaternion();
    out += " 1 " + fmt17(t.x()) + " " + fmt17(t.y()) + " " + fmt17(t.z()) + " " +
           fmt17(qq.x()) + " " + fmt17(qq.y()) + " " + fmt17(qq.z()) + " " + fmt17(qq.w()) +
           " " + std::to_string(r.inliers) + " " + fmt17(r.mean_inlier_residual) + " " +
           std::to_string(r.hypothesis) + "\n";
  }
  return out;
}

inline std::vector<QueryResult> decode_results(const std::string& text,
                                               const std::string& source) {
  SCRK_CHECK(text.substr(0, text.find('\n')) == kResultHeader, Errc::kUnsupportedVersion,
             source + ": expected header '" + std::string(kResultHeader) + "'");
  std::vector<QueryResult> out;
  for_each_record(text, source, [&](const auto& f, const LineParser& p) {
    QueryResult q;
    q.id = p.template to_int<ImageId>(f[0]);
    if (f.size() == 2 && f[1] == "0") {
      out.push_back(q);
      return;
    }
    if (f.size() != 12 || f[1] != "1") p.fail("malformed result line");
    LocalizationResult r;
    r.pose = Pose(Eigen::Quaterniond(p.to_double(f[8]), p.to_double(f[5]),
                                     p.to_double(f[6]), p.to_double(f[7])),
                  Eigen::Vector3d(p.to_double(f[2]), p.to_double(f[3]), p.to_double(f[4])));
    r.inliers = p.template to_int<int>(f[9]);
    r.mean_inlier_residual = p.to_double(f[10]);
    r.hypothesis = p.template to_int<int>(f[11]);
    q.result = r;
    out.push_back(q);
  });
  return out;
}

inline void write_results(const std::filesystem::path& p,
                          const std::vector<QueryResult>& results) {
  write_file_atomic(p, encode_results(results));
}
inline std::vector<QueryResult> read_results(const std::filesystem::path& p) {
  return decode_results(read_file(p), p.string());
}

// 64-bit FNV-1a over file bytes, for run manifests.
inline std::uint64_t content_hash(std::string_view bytes) {
  return scrk::detail::fnv1a(bytes);
}

}  // namespace scrk::io
