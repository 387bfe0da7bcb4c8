#include "moelrc/artifact_io.hpp"

#include "json.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace moelrc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint32_t kQuantMagic = 0x54414d51;  // "QMAT"
constexpr std::uint32_t kCompMagic = 0x5043524c;   // "LRCP"
constexpr std::uint32_t kDenseMagic = 0x54414d44;  // "DMAT"

class Writer {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::span<const std::uint8_t> bytes(std::size_t n) {
    need(n);
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw FormatError("blob truncated");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

// Upper bound on decoded dimensions; guards allocation on corrupt headers.
constexpr std::uint64_t kMaxDim = 1ull << 24;

void write_quantized(Writer& w, const QuantizedMatrix& qm) {
  w.u32(kQuantMagic);
  w.u64(static_cast<std::uint64_t>(qm.rows));
  w.u64(static_cast<std::uint64_t>(qm.cols));
  w.u32(static_cast<std::uint32_t>(qm.bits));
  w.u32(static_cast<std::uint32_t>(qm.group_size));
  w.u64(qm.scales.size());
  w.bytes(pack_codes(qm.codes, qm.bits));
  for (double s : qm.scales) w.f64(s);
  for (double z : qm.zero_points) w.f64(z);
}

QuantizedMatrix read_quantized(Reader& r) {
  if (r.u32() != kQuantMagic) throw FormatError("bad quantized-matrix magic");
  QuantizedMatrix qm;
  const std::uint64_t rows = r.u64();
  const std::uint64_t cols = r.u64();
  if (rows > kMaxDim || cols > kMaxDim) throw FormatError("implausible matrix shape");
  qm.rows = static_cast<Index>(rows);
  qm.cols = static_cast<Index>(cols);
  qm.bits = static_cast<int>(r.u32());
  qm.group_size = static_cast<int>(r.u32());
  const std::uint64_t groups = r.u64();
  if (qm.bits < 0 || qm.bits > 8) throw FormatError("bad bit-width");
  if (groups != static_cast<std::uint64_t>(qm.num_groups()))
    throw FormatError("group count inconsistent with shape");
  const std::size_t count = static_cast<std::size_t>(rows * cols);
  if (count > 0) {
    const auto packed = r.bytes(static_cast<std::size_t>(packed_size_bytes(rows, cols, qm.bits)));
    qm.codes = unpack_codes(packed, count, qm.bits);
  }
  qm.scales.resize(static_cast<std::size_t>(groups));
  qm.zero_points.resize(static_cast<std::size_t>(groups));
  for (auto& s : qm.scales) s = r.f64();
  for (auto& z : qm.zero_points) z = r.f64();
  try {
    qm.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(e.what());
  }
  return qm;
}

void write_dense(Writer& w, const Matrix& m) {
  w.u32(kDenseMagic);
  w.u64(static_cast<std::uint64_t>(m.rows()));
  w.u64(static_cast<std::uint64_t>(m.cols()));
  for (Index i = 0; i < m.size(); ++i) w.f64(m.data()[i]);
}

Matrix read_dense(Reader& r) {
  if (r.u32() != kDenseMagic) throw FormatError("bad dense-matrix magic");
  const std::uint64_t rows = r.u64();
  const std::uint64_t cols = r.u64();
  if (rows > kMaxDim || cols > kMaxDim) throw FormatError("implausible matrix shape");
  Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = r.f64();
  return m;
}

std::string blob_name(const MatrixKey& k, const char* suffix) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "L%03d_E%03d_%s.%s.bin", k.layer, k.expert,
                std::string(to_string(k.projection)).c_str(), suffix);
  return buf;
}

json blob_entry(const std::string& file, std::span<const std::uint8_t> bytes) {
  return {{"file", file}, {"bytes", bytes.size()}, {"crc32", crc32(bytes)}};
}

std::vector<std::uint8_t> load_blob(const fs::path& dir, const json& entry, const std::string& what) {
  const fs::path path = dir / entry.at("file").get<std::string>();
  if (!fs::exists(path)) throw FormatError(what + ": missing blob " + path.string());
  std::vector<std::uint8_t> bytes = read_file(path);
  const auto expected = entry.at("bytes").get<std::uint64_t>();
  if (bytes.size() != expected)
    throw FormatError(what + ": truncated blob " + path.filename().string() + " (expected " +
                      std::to_string(expected) + " bytes, found " + std::to_string(bytes.size()) + ")");
  if (crc32(bytes) != entry.at("crc32").get<std::uint32_t>())
    throw ChecksumError(what + ": checksum mismatch in " + path.filename().string());
  return bytes;
}

json quant_to_json(const QuantConfig& q) {
  return {{"bits", q.bits},
          {"group_size", q.group_size},
          {"hqq_iters", q.hqq_iters},
          {"hqq_shrink_p", q.hqq_shrink_p},
          {"hqq_beta", q.hqq_beta},
          {"hqq_beta_growth", q.hqq_beta_growth}};
}

QuantConfig quant_from_json(const json& j) {
  QuantConfig q;
  q.bits = j.at("bits").get<int>();
  q.group_size = j.at("group_size").get<int>();
  q.hqq_iters = j.at("hqq_iters").get<int>();
  q.hqq_shrink_p = j.at("hqq_shrink_p").get<double>();
  q.hqq_beta = j.at("hqq_beta").get<double>();
  q.hqq_beta_growth = j.at("hqq_beta_growth").get<double>();
  return q;
}

json dims_to_json(const ModelShape& d) {
  return {{"hidden", d.hidden},
          {"ffn", d.ffn},
          {"num_layers", d.num_layers},
          {"num_experts", d.num_experts},
          {"num_shared", d.num_shared}};
}

ModelShape dims_from_json(const json& j) {
  return {j.at("hidden").get<Index>(), j.at("ffn").get<Index>(), j.at("num_layers").get<Index>(),
          j.at("num_experts").get<Index>(), j.at("num_shared").get<Index>()};
}

void check_version(const json& j, const std::string& what) {
  const int v = j.at("format_version").get<int>();
  if (v != kArtifactFormatVersion)
    throw FormatError(what + ": unsupported format_version " + std::to_string(v) +
                      " (this build reads version " + std::to_string(kArtifactFormatVersion) + ")");
}

}  // namespace

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for very large blobs.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    crc = ::crc32(crc, bytes.data() + off, n);
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> encode_quantized(const QuantizedMatrix& qm) {
  qm.validate();
  Writer w;
  write_quantized(w, qm);
  return w.take();
}

QuantizedMatrix decode_quantized(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  QuantizedMatrix qm = read_quantized(r);
  if (!r.done()) throw FormatError("trailing bytes after quantized matrix");
  return qm;
}

std::vector<std::uint8_t> encode_compensator(const Compensator& c) {
  c.validate();
  Writer w;
  w.u32(kCompMagic);
  w.u32(static_cast<std::uint32_t>(c.projection));
  w.u64(static_cast<std::uint64_t>(c.rank));
  w.u64(static_cast<std::uint64_t>(c.rows));
  w.u64(static_cast<std::uint64_t>(c.cols));
  if (c.rank > 0) {
    write_quantized(w, c.u);
    write_quantized(w, c.v);
  }
  return w.take();
}

Compensator decode_compensator(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (r.u32() != kCompMagic) throw FormatError("bad compensator magic");
  Compensator c;
  const std::uint32_t proj = r.u32();
  if (proj > 2) throw FormatError("bad compensator projection");
  c.projection = static_cast<Projection>(proj);
  c.rank = static_cast<Index>(r.u64());
  c.rows = static_cast<Index>(r.u64());
  c.cols = static_cast<Index>(r.u64());
  if (c.rank > 0) {
    c.u = read_quantized(r);
    c.v = read_quantized(r);
  }
  if (!r.done()) throw FormatError("trailing bytes after compensator");
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(e.what());
  }
  return c;
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

void write_text(const fs::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string read_text(const fs::path& path) {
  const auto bytes = read_file(path);
  return {bytes.begin(), bytes.end()};
}

void save_artifact(const CompressedModel& artifact, const fs::path& dir) {
  artifact.validate();
  fs::create_directories(dir / "blobs");
  const ArtifactHeader& h = artifact.header;
  json manifest;
  manifest["format_version"] = h.format_version;
  manifest["kind"] = "moe-lrc-artifact";
  manifest["model_dims"] = dims_to_json(h.dims);
  manifest["quant_cfg"] = quant_to_json(h.quant);
  manifest["factor_bits"] = h.factors.factor_bits;
  manifest["factor_group_size"] = h.factors.factor_group_size;
  manifest["buckets"] = h.buckets;
  manifest["avg_budget"] = h.avg_budget;
  manifest["allocation_scope"] = std::string(to_string(h.scope));
  manifest["seed"] = h.seed;

  json records = json::array();
  for (const ProjectionArtifact& p : artifact.projections) {
    json rec;
    rec["layer"] = p.key.layer;
    rec["expert"] = p.key.expert;
    rec["projection"] = std::string(to_string(p.key.projection));
    rec["kurtosis"] = p.kurtosis;
    rec["rank"] = p.rank;
    const std::string qname = "blobs/" + blob_name(p.key, "q");
    const auto qbytes = encode_quantized(p.weights);
    write_file(dir / qname, qbytes);
    rec["weights"] = blob_entry(qname, qbytes);
    if (p.rank > 0) {
      const std::string cname = "blobs/" + blob_name(p.key, "c");
      const auto cbytes = encode_compensator(p.compensator);
      write_file(dir / cname, cbytes);
      rec["compensator"] = blob_entry(cname, cbytes);
    } else {
      rec["compensator"] = nullptr;
    }
    records.push_back(std::move(rec));
  }
  manifest["records"] = std::move(records);
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

CompressedModel load_artifact(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  if (!fs::exists(mpath)) throw FormatError("no artifact manifest at " + mpath.string());
  json manifest;
  try {
    manifest = json::parse(read_text(mpath));
  } catch (const json::exception& e) {
    throw FormatError("artifact manifest: " + std::string(e.what()));
  }
  CompressedModel out;
  try {
    check_version(manifest, "artifact manifest");
    ArtifactHeader& h = out.header;
    h.format_version = manifest.at("format_version").get<int>();
    h.dims = dims_from_json(manifest.at("model_dims"));
    h.quant = quant_from_json(manifest.at("quant_cfg"));
    h.factors.factor_bits = manifest.at("factor_bits").get<int>();
    h.factors.factor_group_size = manifest.at("factor_group_size").get<int>();
    h.buckets = manifest.at("buckets").get<std::vector<Index>>();
    h.avg_budget = manifest.at("avg_budget").get<Index>();
    h.scope = allocation_scope_from_string(manifest.at("allocation_scope").get<std::string>());
    h.seed = manifest.at("seed").get<std::uint64_t>();

    for (const json& rec : manifest.at("records")) {
      ProjectionArtifact p;
      p.key = {rec.at("layer").get<int>(), rec.at("expert").get<int>(),
               projection_from_string(rec.at("projection").get<std::string>())};
      const std::string what = "artifact record " + p.key.str();
      p.kurtosis = rec.at("kurtosis").get<double>();
      p.rank = rec.at("rank").get<Index>();
      try {
        p.weights = decode_quantized(load_blob(dir, rec.at("weights"), what));
        if (!rec.at("compensator").is_null()) {
          p.compensator = decode_compensator(load_blob(dir, rec.at("compensator"), what));
        } else {
          const auto [m, n] = projection_shape(p.key.projection, h.dims.hidden, h.dims.ffn);
          p.compensator.projection = p.key.projection;
          p.compensator.rows = m;
          p.compensator.cols = n;
        }
      } catch (const ChecksumError&) {
        throw;
      } catch (const FormatError& e) {
        const std::string msg = e.what();
        if (msg.rfind(what, 0) == 0) throw;
        throw FormatError(what + ": " + msg);
      }
      out.projections.push_back(std::move(p));
    }
  } catch (const json::exception& e) {
    throw FormatError("artifact manifest: " + std::string(e.what()));
  }
  std::sort(out.projections.begin(), out.projections.end(),
            [](const auto& a, const auto& b) { return a.key < b.key; });
  out.validate();
  return out;
}

void save_model(const MoEModel& model, const fs::path& dir, const std::string& generator_json) {
  model.validate();
  fs::create_directories(dir);
  Writer w;
  for (const MoELayer& layer : model.layers) {
    write_dense(w, layer.gate);
    for (int id = 0; id < static_cast<int>(model.experts_per_layer()); ++id)
      for (Projection p : kProjections) write_dense(w, layer.expert(id).projection(p));
  }
  const auto bytes = w.take();
  write_file(dir / "model.bin", bytes);
  json j;
  j["format_version"] = kArtifactFormatVersion;
  j["kind"] = "moe-lrc-model";
  j["hidden"] = model.hidden;
  j["ffn"] = model.ffn;
  j["num_layers"] = model.num_layers();
  j["num_experts"] = model.num_experts();
  j["num_shared"] = model.num_shared();
  j["generator"] = json::parse(generator_json);
  j["weights"] = blob_entry("model.bin", bytes);
  write_text(dir / "model.json", j.dump(2) + "\n");
}

MoEModel load_model(const fs::path& dir) {
  const fs::path mpath = dir / "model.json";
  if (!fs::exists(mpath)) throw FormatError("no model at " + mpath.string());
  try {
    const json j = json::parse(read_text(mpath));
    check_version(j, "model.json");
    MoEModel model;
    model.hidden = j.at("hidden").get<Index>();
    model.ffn = j.at("ffn").get<Index>();
    const auto layers = j.at("num_layers").get<Index>();
    const auto experts = j.at("num_experts").get<Index>();
    const auto shared = j.at("num_shared").get<Index>();
    const auto bytes = load_blob(dir, j.at("weights"), "model weights");
    Reader r(bytes);
    model.layers.resize(static_cast<std::size_t>(layers));
    for (MoELayer& layer : model.layers) {
      layer.gate = read_dense(r);
      layer.experts.resize(static_cast<std::size_t>(experts));
      layer.shared.resize(static_cast<std::size_t>(shared));
      for (int id = 0; id < static_cast<int>(experts + shared); ++id) {
        ExpertWeights& e = id < experts ? layer.experts[static_cast<std::size_t>(id)]
                                        : layer.shared[static_cast<std::size_t>(id - experts)];
        for (Projection p : kProjections) e.projection(p) = read_dense(r);
      }
    }
    if (!r.done()) throw FormatError("model.bin: trailing bytes");
    try {
      model.validate();
    } catch (const std::invalid_argument& e) {
      throw FormatError(std::string("model: ") + e.what());
    }
    return model;
  } catch (const json::exception& e) {
    throw FormatError("model.json: " + std::string(e.what()));
  }
}

}  // namespace moelrc
