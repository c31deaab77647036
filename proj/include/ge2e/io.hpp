#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ge2e/common.hpp"
#include "ge2e/dsp.hpp"
#include "ge2e/net.hpp"

namespace ge2e {

namespace detail {

class ByteReader {
 public:
  ByteReader(std::string bytes, std::string context)
      : bytes_(std::move(bytes)), context_(std::move(context)) {}

  void raw(void* dst, std::size_t n) {
    if (pos_ + n > bytes_.size())
      throw Error(ErrorKind::FormatError, context_ + ": truncated file");
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::uint16_t u16() { std::uint16_t v; raw(&v, 2); return v; }
  std::uint32_t u32() { std::uint32_t v; raw(&v, 4); return v; }
  double f64() { double v; raw(&v, 8); return v; }
  float f32() { float v; raw(&v, 4); return v; }
  std::string str(std::size_t n) {
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  void expect_magic(const char* magic) {
    if (str(4) != magic)
      throw Error(ErrorKind::FormatError, context_ + ": bad magic bytes");
  }
  bool at_end() const { return pos_ == bytes_.size(); }
  void require_end() {
    if (!at_end())
      throw Error(ErrorKind::FormatError, context_ + ": trailing bytes");
  }

 private:
  std::string bytes_;
  std::string context_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

/// Writes via a temp file plus atomic rename.
inline void write_file(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, "cannot write " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::IoError, "write failed: " + path);
  }
  std::filesystem::rename(tmp, path);
}

template <typename T>
void append_pod(std::string& s, T v) {
  s.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// FeatureMatrix files: "FMX1", u32 rows, u32 cols, row-major f32.

inline void write_feature_matrix(const std::string& path, const FeatureMatrix& fm) {
  std::string out = "FMX1";
  detail::append_pod<std::uint32_t>(out, static_cast<std::uint32_t>(fm.data.rows()));
  detail::append_pod<std::uint32_t>(out, static_cast<std::uint32_t>(fm.data.cols()));
  for (Eigen::Index r = 0; r < fm.data.rows(); ++r)
    for (Eigen::Index c = 0; c < fm.data.cols(); ++c)
      detail::append_pod<float>(out, static_cast<float>(fm.data(r, c)));
  detail::write_file(path, out);
}

inline FeatureMatrix read_feature_matrix(const std::string& path) {
  detail::ByteReader r(detail::read_file(path), path);
  r.expect_magic("FMX1");
  const std::uint32_t rows = r.u32();
  const std::uint32_t cols = r.u32();
  FeatureMatrix fm;
  fm.data.resize(rows, cols);
  for (std::uint32_t i = 0; i < rows; ++i)
    for (std::uint32_t j = 0; j < cols; ++j) fm.data(i, j) = r.f32();
  r.require_end();
  return fm;
}

// ---------------------------------------------------------------------------
// Checkpoints: "GE2E", u32 version, NetConfig fields, then named tensors
// (u16 name length + name + u32 rank + u32 dims + f64 data). The loss scale
// travels as two rank-0 tensors.

constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  NetworkParams params;
  double scale_w = 10.0;
  double scale_b = -5.0;
};

namespace detail {

inline void append_tensor(std::string& out, const std::string& name,
                          const std::vector<std::uint32_t>& dims,
                          const double* data, std::size_t count) {
  append_pod<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
  out += name;
  append_pod<std::uint32_t>(out, static_cast<std::uint32_t>(dims.size()));
  for (auto d : dims) append_pod<std::uint32_t>(out, d);
  out.append(reinterpret_cast<const char*>(data), count * 8);
}

}  // namespace detail

inline void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const auto& cfg = ckpt.params.cfg;
  std::string out = "GE2E";
  detail::append_pod<std::uint32_t>(out, kCheckpointVersion);
  detail::append_pod<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.input_dim));
  detail::append_pod<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.hidden_dim));
  detail::append_pod<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.num_layers));
  detail::append_pod<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.embedding_dim));
  detail::append_pod<std::uint32_t>(out, cfg.dual_bias ? 1 : 0);

  auto tensor_mat = [&](const std::string& name, const Mat& m) {
    // Row-major serialization, fixed regardless of in-memory layout.
    std::vector<double> buf(static_cast<std::size_t>(m.size()));
    std::size_t p = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) buf[p++] = m(r, c);
    detail::append_tensor(out, name,
                          {static_cast<std::uint32_t>(m.rows()),
                           static_cast<std::uint32_t>(m.cols())},
                          buf.data(), buf.size());
  };
  auto tensor_vec = [&](const std::string& name, const Vec& v) {
    detail::append_tensor(out, name, {static_cast<std::uint32_t>(v.size())},
                          v.data(), static_cast<std::size_t>(v.size()));
  };

  for (int l = 0; l < cfg.num_layers; ++l) {
    const auto& lp = ckpt.params.layers[static_cast<std::size_t>(l)];
    const std::string prefix = "lstm." + std::to_string(l) + ".";
    tensor_mat(prefix + "w_input", lp.w_input);
    tensor_mat(prefix + "w_recur", lp.w_recur);
    tensor_vec(prefix + "bias_input", lp.bias_input);
    tensor_vec(prefix + "bias_recur", lp.bias_recur);
  }
  tensor_mat("proj.weight", ckpt.params.proj_weight);
  tensor_vec("proj.bias", ckpt.params.proj_bias);
  detail::append_tensor(out, "loss.w", {}, &ckpt.scale_w, 1);
  detail::append_tensor(out, "loss.b", {}, &ckpt.scale_b, 1);
  detail::write_file(path, out);
}

inline Checkpoint read_checkpoint(const std::string& path) {
  detail::ByteReader r(detail::read_file(path), path);
  r.expect_magic("GE2E");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw Error(ErrorKind::FormatError,
                path + ": unsupported checkpoint version " + std::to_string(version));
  NetConfig cfg;
  cfg.input_dim = static_cast<int>(r.u32());
  cfg.hidden_dim = static_cast<int>(r.u32());
  cfg.num_layers = static_cast<int>(r.u32());
  cfg.embedding_dim = static_cast<int>(r.u32());
  cfg.dual_bias = r.u32() != 0;

  std::map<std::string, std::pair<std::vector<std::uint32_t>, std::vector<double>>> tensors;
  while (!r.at_end()) {
    const std::uint16_t name_len = r.u16();
    const std::string name = r.str(name_len);
    const std::uint32_t rank = r.u32();
    std::vector<std::uint32_t> dims(rank);
    std::size_t count = 1;
    for (auto& d : dims) {
      d = r.u32();
      count *= d;
    }
    std::vector<double> data(count);
    for (auto& v : data) v = r.f64();
    tensors[name] = {std::move(dims), std::move(data)};
  }

  auto take = [&](const std::string& name)
      -> std::pair<std::vector<std::uint32_t>, std::vector<double>>& {
    auto it = tensors.find(name);
    if (it == tensors.end())
      throw Error(ErrorKind::FormatError, path + ": missing tensor " + name);
    return it->second;
  };
  auto load_mat = [&](const std::string& name, Mat& m) {
    auto& [dims, data] = take(name);
    if (dims.size() != 2)
      throw Error(ErrorKind::FormatError, path + ": tensor " + name + " not rank 2");
    m.resize(dims[0], dims[1]);
    std::size_t p = 0;
    for (Eigen::Index row = 0; row < m.rows(); ++row)
      for (Eigen::Index col = 0; col < m.cols(); ++col) m(row, col) = data[p++];
  };
  auto load_vec = [&](const std::string& name, Vec& v) {
    auto& [dims, data] = take(name);
    if (dims.size() != 1)
      throw Error(ErrorKind::FormatError, path + ": tensor " + name + " not rank 1");
    v = Eigen::Map<const Vec>(data.data(), static_cast<Eigen::Index>(data.size()));
  };

  Checkpoint ckpt;
  ckpt.params = NetworkParams::zeros_like(cfg);
  for (int l = 0; l < cfg.num_layers; ++l) {
    auto& lp = ckpt.params.layers[static_cast<std::size_t>(l)];
    const std::string prefix = "lstm." + std::to_string(l) + ".";
    load_mat(prefix + "w_input", lp.w_input);
    load_mat(prefix + "w_recur", lp.w_recur);
    load_vec(prefix + "bias_input", lp.bias_input);
    load_vec(prefix + "bias_recur", lp.bias_recur);
  }
  load_mat("proj.weight", ckpt.params.proj_weight);
  load_vec("proj.bias", ckpt.params.proj_bias);
  ckpt.scale_w = take("loss.w").second.at(0);
  ckpt.scale_b = take("loss.b").second.at(0);
  return ckpt;
}

// ---------------------------------------------------------------------------
// DVectorStore: "DVS1", u32 dim, u32 count, then per record
// (u16 speaker len + bytes, u16 utterance len + bytes, f64 duration,
//  dim x f32 vector).

struct DVectorRecord {
  std::string speaker_id;
  std::string utterance_id;
  double duration_seconds = 0.0;
  Vec vector;
};

struct DVectorStore {
  int dim = 256;
  std::vector<DVectorRecord> records;

  std::map<std::string, std::vector<const DVectorRecord*>> by_speaker() const {
    std::map<std::string, std::vector<const DVectorRecord*>> m;
    for (const auto& rec : records) m[rec.speaker_id].push_back(&rec);
    return m;
  }
};

inline void write_dvector_store(const std::string& path, const DVectorStore& store) {
  std::string out = "DVS1";
  detail::append_pod<std::uint32_t>(out, static_cast<std::uint32_t>(store.dim));
  detail::append_pod<std::uint32_t>(out, static_cast<std::uint32_t>(store.records.size()));
  for (const auto& rec : store.records) {
    if (rec.vector.size() != store.dim)
      throw Error(ErrorKind::ShapeError, "d-vector dimension mismatch");
    detail::append_pod<std::uint16_t>(out, static_cast<std::uint16_t>(rec.speaker_id.size()));
    out += rec.speaker_id;
    detail::append_pod<std::uint16_t>(out, static_cast<std::uint16_t>(rec.utterance_id.size()));
    out += rec.utterance_id;
    detail::append_pod<double>(out, rec.duration_seconds);
    for (Eigen::Index i = 0; i < rec.vector.size(); ++i)
      detail::append_pod<float>(out, static_cast<float>(rec.vector(i)));
  }
  detail::write_file(path, out);
}

inline DVectorStore read_dvector_store(const std::string& path) {
  detail::ByteReader r(detail::read_file(path), path);
  r.expect_magic("DVS1");
  DVectorStore store;
  store.dim = static_cast<int>(r.u32());
  const std::uint32_t count = r.u32();
  std::set<std::pair<std::string, std::string>> seen;
  store.records.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    DVectorRecord rec;
    rec.speaker_id = r.str(r.u16());
    rec.utterance_id = r.str(r.u16());
    rec.duration_seconds = r.f64();
    rec.vector.resize(store.dim);
    for (int d = 0; d < store.dim; ++d) rec.vector(d) = r.f32();
    if (!seen.emplace(rec.speaker_id, rec.utterance_id).second)
      throw Error(ErrorKind::FormatError, path + ": duplicate record id");
    store.records.push_back(std::move(rec));
  }
  r.require_end();
  return store;
}

// ---------------------------------------------------------------------------
// Manifests: TSV with a required header line
// speaker_id<TAB>utterance_id<TAB>path<TAB>duration_seconds<TAB>split

struct ManifestEntry {
  std::string speaker_id;
  std::string utterance_id;
  std::string path;
  double duration_seconds = 0.0;
  std::string split;  // train | dev | test
};

struct Manifest {
  std::vector<ManifestEntry> entries;

  std::vector<ManifestEntry> with_split(const std::string& split) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries)
      if (e.split == split) out.push_back(e);
    return out;
  }
};

inline void write_manifest(const std::string& path, const Manifest& m) {
  std::ostringstream out;
  out.precision(std::numeric_limits<double>::max_digits10);
  out << "speaker_id\tutterance_id\tpath\tduration_seconds\tsplit\n";
  for (const auto& e : m.entries)
    out << e.speaker_id << '\t' << e.utterance_id << '\t' << e.path << '\t'
        << e.duration_seconds << '\t' << e.split << '\n';
  detail::write_file(path, out.str());
}

/// Loads and validates a manifest: ids unique, files present, and the
/// open-set rule (train speakers disjoint from dev/test speakers).
inline Manifest ingest(const std::string& manifest_path,
                       bool check_paths = true) {
  std::ifstream in(manifest_path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + manifest_path);
  std::string line;
  if (!std::getline(in, line) ||
      line != "speaker_id\tutterance_id\tpath\tduration_seconds\tsplit")
    throw Error(ErrorKind::FormatError, manifest_path + ": missing manifest header");

  Manifest m;
  std::set<std::pair<std::string, std::string>> ids;
  std::set<std::string> train_speakers, eval_speakers;
  const std::filesystem::path base =
      std::filesystem::path(manifest_path).parent_path();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    ManifestEntry e;
    std::string dur;
    if (!std::getline(ss, e.speaker_id, '\t') ||
        !std::getline(ss, e.utterance_id, '\t') ||
        !std::getline(ss, e.path, '\t') || !std::getline(ss, dur, '\t') ||
        !std::getline(ss, e.split))
      throw Error(ErrorKind::FormatError, manifest_path + ": malformed line: " + line);
    e.duration_seconds = std::stod(dur);
    if (e.split != "train" && e.split != "dev" && e.split != "test")
      throw Error(ErrorKind::FormatError,
                  manifest_path + ": unknown split tag " + e.split);
    if (!ids.emplace(e.speaker_id, e.utterance_id).second)
      throw Error(ErrorKind::FormatError,
                  manifest_path + ": duplicate id " + e.speaker_id + "/" + e.utterance_id);
    if (std::filesystem::path(e.path).is_relative())
      e.path = (base / e.path).string();
    if (check_paths && !std::filesystem::exists(e.path))
      throw Error(ErrorKind::IoError, manifest_path + ": missing file " + e.path);
    (e.split == "train" ? train_speakers : eval_speakers).insert(e.speaker_id);
    m.entries.push_back(std::move(e));
  }
  if (m.entries.empty())
    throw Error(ErrorKind::EmptyManifest, manifest_path + ": no entries");
  for (const auto& s : train_speakers)
    if (eval_speakers.count(s))
      throw Error(ErrorKind::OpenSetViolation,
                  manifest_path + ": speaker " + s + " appears in train and eval splits");
  return m;
}

}  // namespace ge2e
