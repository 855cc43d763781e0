// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "lrlm/io/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include "lrlm/common/error.hpp"
#include "lrlm/io/config.hpp"

namespace lrlm::io {

using linalg::Grid;
using transformer::LayerSpec;
using transformer::LinearKind;
using transformer::LinearLayer;
using transformer::MatrixId;
using transformer::Model;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

// ---------------------------------------------------------------- half precision

std::uint16_t float_to_half(float f) {
  const std::uint32_t x = std::bit_cast<std::uint32_t>(f);
  const std::uint32_t sign = (x >> 16) & 0x8000u;
  const std::uint32_t exp = (x >> 23) & 0xffu;
  std::uint32_t mant = x & 0x7fffffu;
  if (exp == 0xffu) return static_cast<std::uint16_t>(sign | 0x7c00u | (mant ? 0x200u | (mant >> 13) : 0u));
  const int e = static_cast<int>(exp) - 127 + 15;
  if (e >= 31) return static_cast<std::uint16_t>(sign | 0x7c00u);
  if (e <= 0) {
    if (e < -10) return static_cast<std::uint16_t>(sign);
    mant |= 0x800000u;
    const int shift = 14 - e;
    std::uint32_t h = mant >> shift;
    const std::uint32_t rem = mant & ((1u << shift) - 1u);
    const std::uint32_t half = 1u << (shift - 1);
    if (rem > half || (rem == half && (h & 1u))) ++h;
    return static_cast<std::uint16_t>(sign | h);
  }
  std::uint32_t h = (static_cast<std::uint32_t>(e) << 10) | (mant >> 13);
  const std::uint32_t rem = mant & 0x1fffu;
  if (rem > 0x1000u || (rem == 0x1000u && (h & 1u))) ++h;  // may carry into the exponent, which is correct
  return static_cast<std::uint16_t>(sign | h);
}

float half_to_float(std::uint16_t h) {
  const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
  const std::uint32_t exp = (h >> 10) & 0x1fu;
  std::uint32_t mant = h & 0x3ffu;
  std::uint32_t x;
  if (exp == 0) {
    if (mant == 0) {
      x = sign;
    } else {
      int e = -1;
      do {
        ++e;
        mant <<= 1;
      } while ((mant & 0x400u) == 0);
      x = sign | (static_cast<std::uint32_t>(127 - 15 - e) << 23) | ((mant & 0x3ffu) << 13);
    }
  } else if (exp == 31) {
    x = sign | 0x7f800000u | (mant << 13);
  } else {
    x = sign | ((exp - 15 + 127) << 23) | (mant << 13);
  }
  return std::bit_cast<float>(x);
}

// ---------------------------------------------------------------- writing

namespace {

struct Blob {
  std::string name;
  TensorEntry entry;
  std::vector<std::uint8_t> bytes;
};

class Writer {
 public:
  explicit Writer(StoreDtype dtype) : dtype_(dtype) {}

  void dense(const std::string& name, const Grid<float>& g) {
    Blob b;
    b.name = name;
    b.entry.shape = {g.rows(), g.cols()};
    if (dtype_ == StoreDtype::kF16) {
      b.entry.dtype = "f16";
      b.bytes.resize(g.size() * 2);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const std::uint16_t h = float_to_half(g.data()[i]);
        std::memcpy(b.bytes.data() + 2 * i, &h, 2);
      }
    } else {
      raw_f32(b, g.data(), g.size());
    }
    blobs_.push_back(std::move(b));
  }

  void quantized(const std::string& name, const quant::QuantizedMatrix& q) {
    Blob b;
    b.name = name;
    b.entry.dtype = q.bits() == 8 ? "u8q" : "u4q";
    b.entry.shape = {q.rows(), q.cols()};
    b.bytes.assign(q.codes().begin(), q.codes().end());
    blobs_.push_back(std::move(b));
    companion(name + ".scale", q.scale());
    companion(name + ".offset", q.offset());
  }

  void linear(const LinearLayer<float>& lin, Json& linears, Json& merged) {
    const std::string& p = lin.name();
    linears[p] = to_json(transformer::LayerSpecMap{{MatrixId::kQ, lin.spec()}})["wq"];
    switch (lin.kind()) {
      case LinearKind::kDense: dense(p + ".weight", static_cast<const transformer::DenseLinear<float>&>(lin).weight()); break;
      case LinearKind::kLowRank: {
        const auto& f = static_cast<const transformer::LowRankLinear<float>&>(lin).factors();
        dense(p + ".down", f.down);
        dense(p + ".up", f.up);
        break;
      }
      case LinearKind::kQuantized:
        quantized(p + ".weight", static_cast<const transformer::QuantLinear<float>&>(lin).matrix());
        break;
      case LinearKind::kLora: {
        const auto& a = static_cast<const transformer::LoraLinear<float>&>(lin).adapter();
        if (const auto* q = std::get_if<quant::QuantizedMatrix>(&a.base)) {
          quantized(p + ".base", *q);
        } else {
          dense(p + ".base", std::get<Grid<float>>(a.base));
        }
        dense(p + ".down", a.delta.down);
        dense(p + ".up", a.delta.up);
        if (a.merged) merged.push_back(p);
        break;
      }
      case LinearKind::kBlend: {
        const auto& bl = static_cast<const transformer::BlendLinear<float>&>(lin).layer();
        dense(p + ".base", bl.base);
        dense(p + ".down", bl.delta.down);
        dense(p + ".up", bl.delta.up);
        break;
      }
    }
  }

  std::vector<Blob>& blobs() { return blobs_; }

 private:
  static void raw_f32(Blob& b, const float* data, std::size_t n) {
    b.entry.dtype = "f32";
    b.bytes.resize(n * 4);
    if (n) std::memcpy(b.bytes.data(), data, n * 4);
  }

  void companion(const std::string& name, std::span<const float> v) {
    Blob b;
    b.name = name;
    b.entry.shape = {v.size()};
    raw_f32(b, v.data(), v.size());
    blobs_.push_back(std::move(b));
  }

  StoreDtype dtype_;
  std::vector<Blob> blobs_;
};

std::uint64_t align_up(std::uint64_t x) { return (x + kPayloadAlign - 1) / kPayloadAlign * kPayloadAlign; }

std::size_t dtype_bytes(const std::string& dtype, const std::vector<std::size_t>& shape) {
  std::size_t elems = 1;
  for (auto s : shape) elems *= s;
  if (dtype == "f32") return elems * 4;
  if (dtype == "f16") return elems * 2;
  if (shape.size() != 2) throw FormatError("quantized tensor must be 2-D");
  if (dtype == "u8q") return shape[0] * shape[1];
  if (dtype == "u4q") return shape[0] * ((shape[1] + 1) / 2);
  throw FormatError("unknown dtype '" + dtype + "'");
}

}  // namespace

CheckpointInfo save_checkpoint(const std::filesystem::path& path, const Model<float>& model, const SaveOptions& opts) {
  Writer w(opts.dtype);
  Json linears = Json::object();
  Json merged = Json::array();
  const auto& cfg = model.config();
  w.dense("embed.weight", model.embedding());
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const auto& D = model.layer(l);
    w.dense(transformer::norm_name(l, "attn_norm"), D.attn_norm);
    for (MatrixId id : {MatrixId::kQ, MatrixId::kK, MatrixId::kV, MatrixId::kO}) w.linear(D.at(id), linears, merged);
    w.dense(transformer::norm_name(l, "ffn_norm"), D.ffn_norm);
    for (MatrixId id : {MatrixId::kU, MatrixId::kG, MatrixId::kD}) w.linear(D.at(id), linears, merged);
  }
  w.dense("final_norm", model.final_norm());
  w.linear(model.head(), linears, merged);

  CheckpointInfo info;
  info.version = kCheckpointVersion;
  Json table = Json::object();
  std::uint64_t offset = 0;
  for (auto& b : w.blobs()) {
    b.entry.offset = offset;
    b.entry.length = b.bytes.size();
    offset = align_up(offset + b.entry.length);
    table[b.name] = {{"dtype", b.entry.dtype}, {"shape", b.entry.shape}, {"offset", b.entry.offset},
                     {"length", b.entry.length}};
    info.tensors[b.name] = b.entry;
  }
  info.payload_bytes = offset;

  Json frozen = Json::array();
  for (const auto& f : model.frozen()) frozen.push_back(f);
  Json header;
  header["format"] = "lrlm";
  header["model_config"] = to_json(cfg);
  header["layer_specs"] = to_json(model.specs());
  header["linears"] = linears;
  header["lora_merged"] = merged;
  header["frozen"] = frozen;
  header["step"] = opts.step;
  header["tensors"] = table;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t header_len = text.size();
  out.write("LRLM", 4);
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&header_len), 8);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  const std::uint64_t payload_start = align_up(16 + header_len);
  std::string pad(payload_start - 16 - header_len, '\0');
  out.write(pad.data(), static_cast<std::streamsize>(pad.size()));
  std::uint64_t written = 0;
  for (const auto& b : w.blobs()) {
    if (b.entry.offset > written) {
      std::string gap(b.entry.offset - written, '\0');
      out.write(gap.data(), static_cast<std::streamsize>(gap.size()));
      written = b.entry.offset;
    }
    out.write(reinterpret_cast<const char*>(b.bytes.data()), static_cast<std::streamsize>(b.bytes.size()));
    written += b.bytes.size();
  }
  if (info.payload_bytes > written) {
    std::string gap(info.payload_bytes - written, '\0');
    out.write(gap.data(), static_cast<std::streamsize>(gap.size()));
  }
  out.close();
  if (!out) throw ConfigError("write failed for '" + path.string() + "'");
  info.file_bytes = payload_start + info.payload_bytes;
  return info;
}

// ---------------------------------------------------------------- reading

namespace {

struct Parsed {
  Json header;
  CheckpointInfo info;
  std::uint64_t payload_start = 0;
  std::vector<char> payload;
};

Parsed parse_file(const std::filesystem::path& path, bool with_payload) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  in.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0);
  char magic[4] = {};
  std::uint32_t version = 0;
  std::uint64_t header_len = 0;
  if (file_size < 16) throw FormatError(path.string() + ": truncated preamble");
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&header_len), 8);
  if (std::memcmp(magic, "LRLM", 4) != 0) throw FormatError(path.string() + ": bad magic");
  if (version != kCheckpointVersion) {
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  if (header_len > file_size - 16) throw FormatError(path.string() + ": truncated header");
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));

  Parsed p;
  try {
    p.header = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw FormatError(path.string() + ": corrupt header: " + e.what());
  }
  p.info.version = version;
  p.info.file_bytes = file_size;
  p.payload_start = align_up(16 + header_len);
  const std::uint64_t available = file_size > p.payload_start ? file_size - p.payload_start : 0;

  try {
    if (p.header.value("format", "") != "lrlm") throw FormatError("format tag missing");
    std::vector<std::pair<std::uint64_t, std::uint64_t>> spans;
    for (const auto& [name, e] : p.header.at("tensors").items()) {
      TensorEntry t;
      t.dtype = e.at("dtype").get<std::string>();
      t.shape = e.at("shape").get<std::vector<std::size_t>>();
      t.offset = e.at("offset").get<std::uint64_t>();
      t.length = e.at("length").get<std::uint64_t>();
      if (t.offset % kPayloadAlign != 0) throw FormatError("tensor '" + name + "' is misaligned");
      if (dtype_bytes(t.dtype, t.shape) != t.length) throw FormatError("tensor '" + name + "' length disagrees with shape");
      if (t.offset + t.length > available || t.offset + t.length < t.offset) {
        throw FormatError("truncated payload at tensor '" + name + "'");
      }
      if ((t.dtype == "u8q" || t.dtype == "u4q")) {
        const auto& tab = p.header.at("tensors");
        if (!tab.contains(name + ".scale") || !tab.contains(name + ".offset")) {
          throw FormatError("quantized tensor '" + name + "' lacks scale/offset companions");
        }
      }
      spans.emplace_back(t.offset, t.length);
      p.info.tensors[name] = t;
      p.info.payload_bytes = std::max(p.info.payload_bytes, t.offset + t.length);
    }
    std::sort(spans.begin(), spans.end());
    for (std::size_t i = 1; i < spans.size(); ++i) {
      if (spans[i - 1].first + spans[i - 1].second > spans[i].first) throw FormatError("overlapping tensors");
    }
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const Json::exception& e) {
    throw FormatError(path.string() + ": corrupt header: " + e.what());
  }

  if (with_payload) {
    p.payload.resize(p.info.payload_bytes);
    in.seekg(static_cast<std::streamoff>(p.payload_start));
    in.read(p.payload.data(), static_cast<std::streamsize>(p.payload.size()));
    if (static_cast<std::uint64_t>(in.gcount()) != p.payload.size()) throw FormatError(path.string() + ": truncated payload");
  }
  return p;
}

class Reader {
 public:
  explicit Reader(const Parsed& p) : p_(p) {}

  const TensorEntry& entry(const std::string& name) const {
    auto it = p_.info.tensors.find(name);
    if (it == p_.info.tensors.end()) throw FormatError("missing tensor '" + name + "'");
    return it->second;
  }

  Grid<float> dense(const std::string& name, std::size_t rows, std::size_t cols) const {
    const auto& e = entry(name);
    if (e.shape.size() != 2 || e.shape[0] != rows || e.shape[1] != cols) {
      throw FormatError("tensor '" + name + "' has shape " + shape_text(e.shape) + ", expected [" +
                        std::to_string(rows) + "," + std::to_string(cols) + "]");
    }
    Grid<float> g(rows, cols);
    const char* src = p_.payload.data() + e.offset;
    if (e.dtype == "f32") {
      if (g.size()) std::memcpy(g.data(), src, g.size() * 4);
    } else if (e.dtype == "f16") {
      for (std::size_t i = 0; i < g.size(); ++i) {
        std::uint16_t h;
        std::memcpy(&h, src + 2 * i, 2);
        g.data()[i] = half_to_float(h);
      }
    } else {
      throw FormatError("tensor '" + name + "' is " + e.dtype + ", expected a dense dtype");
    }
    return g;
  }

  std::vector<float> vec(const std::string& name, std::size_t n) const {
    const auto& e = entry(name);
    if (e.dtype != "f32" || e.shape.size() != 1 || e.shape[0] != n) throw FormatError("bad companion '" + name + "'");
    std::vector<float> v(n);
    if (n) std::memcpy(v.data(), p_.payload.data() + e.offset, n * 4);
    return v;
  }

  bool is_quantized(const std::string& name) const {
    const auto& d = entry(name).dtype;
    return d == "u8q" || d == "u4q";
  }

  quant::QuantizedMatrix quantized(const std::string& name, std::size_t rows, std::size_t cols) const {
    const auto& e = entry(name);
    if (!is_quantized(name) || e.shape.size() != 2 || e.shape[0] != rows || e.shape[1] != cols) {
      throw FormatError("tensor '" + name + "' is not a " + std::to_string(rows) + "x" + std::to_string(cols) +
                        " quantized matrix");
    }
    const auto* src = reinterpret_cast<const std::uint8_t*>(p_.payload.data() + e.offset);
    std::vector<std::uint8_t> codes(src, src + e.length);
    return quant::QuantizedMatrix(rows, cols, e.dtype == "u8q" ? 8 : 4, std::move(codes), vec(name + ".scale", rows),
                                  vec(name + ".offset", rows));
  }

 private:
  static std::string shape_text(const std::vector<std::size_t>& s) {
    std::string t = "[";
    for (std::size_t i = 0; i < s.size(); ++i) t += (i ? "," : "") + std::to_string(s[i]);
    return t + "]";
  }

  const Parsed& p_;
};

std::unique_ptr<LinearLayer<float>> read_linear(const Reader& r, const std::string& p, const LayerSpec& spec,
                                                std::size_t fo, std::size_t fi, bool merged, std::size_t step) {
  spec.validate(fo, fi, p);
  switch (spec.kind) {
    case LinearKind::kDense:
      return std::make_unique<transformer::DenseLinear<float>>(p, r.dense(p + ".weight", fo, fi));
    case LinearKind::kLowRank:
      return std::make_unique<transformer::LowRankLinear<float>>(
          p, lowrank::LowRankFactors<float>{r.dense(p + ".down", spec.rank, fi), r.dense(p + ".up", fo, spec.rank)});
    case LinearKind::kQuantized:
      return std::make_unique<transformer::QuantLinear<float>>(p, r.quantized(p + ".weight", fo, fi));
    case LinearKind::kLora: {
      lowrank::LoraAdapter<float> a;
      if (r.is_quantized(p + ".base")) {
        a.base = r.quantized(p + ".base", fo, fi);
      } else {
        a.base = r.dense(p + ".base", fo, fi);
      }
      a.delta = {r.dense(p + ".down", spec.rank, fi), r.dense(p + ".up", fo, spec.rank)};
      a.merged = merged;
      return std::make_unique<transformer::LoraLinear<float>>(p, std::move(a));
    }
    case LinearKind::kBlend: {
      lowrank::BlendLayer<float> b;
      b.base = r.dense(p + ".base", fo, fi);
      b.delta = {r.dense(p + ".down", spec.rank, fi), r.dense(p + ".up", fo, spec.rank)};
      b.start_alpha = spec.start_alpha;
      b.end_step = spec.end_step;
      return std::make_unique<transformer::BlendLinear<float>>(p, std::move(b), step);
    }
  }
  throw FormatError("unknown layer kind for '" + p + "'");
}

}  // namespace

CheckpointInfo inspect_checkpoint(const std::filesystem::path& path) { return parse_file(path, false).info; }

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  Parsed p = parse_file(path, true);
  try {
    const Json& h = p.header;
    transformer::ModelConfig cfg;
    try {
      cfg = model_from_json(h.at("model_config"), "model_config");
    } catch (const ConfigError& e) {
      throw FormatError(e.what());
    }
    cfg.validate();
    const std::size_t step = h.at("step").get<std::size_t>();
    std::set<std::string> merged;
    for (const auto& m : h.at("lora_merged")) merged.insert(m.get<std::string>());
    const Json& linears = h.at("linears");
    auto spec_of = [&](const std::string& prefix) {
      if (!linears.contains(prefix)) throw FormatError("no layer spec for '" + prefix + "'");
      return specs_from_json(Json{{"wq", linears.at(prefix)}}, "linears").at(MatrixId::kQ);
    };

    Reader r(p);
    const std::size_t n = cfg.dim;
    Grid<float> embed = r.dense("embed.weight", cfg.vocab, n);
    std::vector<transformer::DecoderLayer<float>> layers(cfg.layers);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      auto& D = layers[l];
      D.attn_norm = r.dense(transformer::norm_name(l, "attn_norm"), 1, n);
      D.ffn_norm = r.dense(transformer::norm_name(l, "ffn_norm"), 1, n);
      for (std::size_t k = 0; k < transformer::kBlockMatrices.size(); ++k) {
        const MatrixId id = transformer::kBlockMatrices[k];
        const std::string prefix = transformer::layer_prefix(l, id);
        auto [fo, fi] = transformer::matrix_shape(cfg, id);
        D.linears[k] = read_linear(r, prefix, spec_of(prefix), fo, fi, merged.count(prefix) > 0, step);
      }
    }
    Grid<float> final_norm = r.dense("final_norm", 1, n);
    auto head = read_linear(r, "head", spec_of("head"), cfg.vocab, n, merged.count("head") > 0, step);

    LoadedCheckpoint out{Model<float>(cfg, std::move(embed), std::move(layers), std::move(final_norm), std::move(head)),
                         p.info, step};
    for (const auto& f : h.at("frozen")) out.model.freeze(f.get<std::string>());
    out.model.set_step(step);
    return out;
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const Error& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const Json::exception& e) {
    throw FormatError(path.string() + ": corrupt header: " + e.what());
  }
}

}  // namespace lrlm::io
