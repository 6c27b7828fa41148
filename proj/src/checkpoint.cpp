// Copyright 2026 The noisesep authors
// SPDX-License-Identifier: Apache-2.0
#include "noisesep/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "noisesep/errors.hpp"

namespace noisesep {
namespace {

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  put_u64(out, bits);
}

class Reader {
 public:
  Reader(std::string data, std::string path)
      : data_(std::move(data)), path_(std::move(path)) {}

  void need(size_t n) const {
    if (pos_ + n > data_.size()) {
      throw FormatError("checkpoint " + path_ + ": truncated at byte " +
                        std::to_string(pos_));
    }
  }
  std::string bytes(size_t n) {
    need(n);
    std::string out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() {
    uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }
  bool at_end() const { return pos_ == data_.size(); }
  const std::string& path() const { return path_; }

 private:
  std::string data_;
  std::string path_;
  size_t pos_ = 0;
};

std::string render_header(const std::map<std::string, std::string>& header) {
  std::string out;
  for (const auto& [key, value] : header) {
    if (key.empty() || key.find('=') != std::string::npos ||
        key.find('\n') != std::string::npos || value.find('\n') != std::string::npos) {
      throw ParamError("checkpoint header entry '" + key +
                       "' must be a single line without '='");
    }
    out += key;
    out += '=';
    out += value;
    out += '\n';
  }
  return out;
}

std::map<std::string, std::string> parse_header(const std::string& text,
                                                const std::string& path) {
  std::map<std::string, std::string> header;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw FormatError("checkpoint " + path + ": bad header line '" + line + "'");
    }
    header[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return header;
}

const std::string& header_value(const Checkpoint& ckpt, const std::string& key) {
  auto it = ckpt.header.find(key);
  if (it == ckpt.header.end()) {
    throw FormatError("checkpoint header is missing key '" + key + "'");
  }
  return it->second;
}

int64_t header_int(const Checkpoint& ckpt, const std::string& key) {
  const std::string& raw = header_value(ckpt, key);
  try {
    size_t used = 0;
    int64_t v = std::stoll(raw, &used);
    if (used != raw.size()) throw std::invalid_argument(raw);
    return v;
  } catch (const std::exception&) {
    throw FormatError("checkpoint header key '" + key + "' has non-integer value '" +
                      raw + "'");
  }
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& rec : records) {
    if (rec.name == name) return &rec.values;
  }
  return nullptr;
}

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::string out;
  out.append(kCheckpointMagic, 8);
  put_u32(out, kCheckpointVersion);
  std::string header = render_header(ckpt.header);
  put_u64(out, header.size());
  out += header;
  put_u64(out, ckpt.records.size());
  for (const auto& rec : ckpt.records) {
    put_u64(out, rec.name.size());
    out += rec.name;
    put_u32(out, static_cast<uint32_t>(rec.values.ndim()));
    for (int64_t d = 0; d < rec.values.ndim(); ++d) {
      put_u64(out, static_cast<uint64_t>(rec.values.dim(d)));
    }
    for (int64_t i = 0; i < rec.values.size(); ++i) put_f64(out, rec.values[i]);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  f.flush();
  if (!f) throw IoError("failed writing checkpoint: " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  if (!f && !f.eof()) throw IoError("failed reading checkpoint: " + path);
  Reader r(buf.str(), path);

  if (r.bytes(8) != std::string(kCheckpointMagic, 8)) {
    throw FormatError("checkpoint " + path + ": bad magic");
  }
  uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint " + path + ": unsupported version " +
                      std::to_string(version));
  }
  Checkpoint ckpt;
  uint64_t header_size = r.u64();
  ckpt.header = parse_header(r.bytes(header_size), path);
  uint64_t count = r.u64();
  for (uint64_t i = 0; i < count; ++i) {
    CheckpointRecord rec;
    rec.name = r.bytes(r.u64());
    uint32_t ndim = r.u32();
    if (ndim > 8) {
      throw FormatError("checkpoint " + path + ": record '" + rec.name +
                        "' claims " + std::to_string(ndim) + " dimensions");
    }
    std::vector<int64_t> shape(ndim);
    for (auto& d : shape) {
      d = static_cast<int64_t>(r.u64());
      if (d <= 0 || d > (int64_t{1} << 32)) {
        throw FormatError("checkpoint " + path + ": record '" + rec.name +
                          "' has invalid extent " + std::to_string(d));
      }
    }
    Tensor t(shape);
    for (int64_t j = 0; j < t.size(); ++j) t[j] = r.f64();
    rec.values = std::move(t);
    ckpt.records.push_back(std::move(rec));
  }
  if (!r.at_end()) {
    throw FormatError("checkpoint " + path + ": trailing bytes after last record");
  }
  return ckpt;
}

void put_config(Checkpoint& ckpt, const SeparatorConfig& cfg) {
  ckpt.header["filters"] = std::to_string(cfg.filters);
  ckpt.header["kernel"] = std::to_string(cfg.kernel);
  ckpt.header["stride"] = std::to_string(cfg.stride);
  ckpt.header["num_speakers"] = std::to_string(cfg.num_speakers);
  ckpt.header["noise_speaker"] = cfg.noise_speaker ? "1" : "0";
  ckpt.header["chunk_size"] = std::to_string(cfg.chunk_size);
  ckpt.header["blocks"] = std::to_string(cfg.blocks);
  ckpt.header["block_kind"] = block_kind_name(cfg.block_kind);
  ckpt.header["hidden"] = std::to_string(cfg.hidden);
  ckpt.header["embed_dim"] = std::to_string(cfg.embed_dim);
}

SeparatorConfig config_from_checkpoint(const Checkpoint& ckpt) {
  SeparatorConfig cfg;
  cfg.filters = header_int(ckpt, "filters");
  cfg.kernel = header_int(ckpt, "kernel");
  cfg.stride = header_int(ckpt, "stride");
  cfg.num_speakers = static_cast<int>(header_int(ckpt, "num_speakers"));
  cfg.noise_speaker = header_int(ckpt, "noise_speaker") != 0;
  cfg.chunk_size = header_int(ckpt, "chunk_size");
  cfg.blocks = header_int(ckpt, "blocks");
  cfg.block_kind = parse_block_kind(header_value(ckpt, "block_kind"));
  cfg.hidden = header_int(ckpt, "hidden");
  cfg.embed_dim = header_int(ckpt, "embed_dim");
  cfg.validate();
  return cfg;
}

Checkpoint model_checkpoint(SeparatorModel& model) {
  Checkpoint ckpt;
  put_config(ckpt, model.config());
  for (Parameter* p : model.parameters()) {
    ckpt.records.push_back({p->name, p->value});
  }
  return ckpt;
}

void load_model_parameters(SeparatorModel& model, const Checkpoint& ckpt) {
  for (Parameter* p : model.parameters()) {
    const Tensor* stored = ckpt.find(p->name);
    if (stored == nullptr) {
      throw FormatError("checkpoint is missing parameter '" + p->name + "'");
    }
    if (!stored->same_shape(p->value)) {
      throw ShapeError("checkpoint parameter '" + p->name + "' has shape " +
                       stored->shape_str() + ", model expects " +
                       p->value.shape_str());
    }
    p->value = *stored;
    p->zero_grad();
  }
}

SeparatorModel model_from_checkpoint(const Checkpoint& ckpt) {
  SeparatorModel model(config_from_checkpoint(ckpt), /*seed=*/0);
  load_model_parameters(model, ckpt);
  return model;
}

}  // namespace noisesep
