// Copyright 2026 The noisesep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "noisesep/signals.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "noisesep/rng.hpp"

namespace fs = std::filesystem;

namespace noisesep {
namespace {

constexpr double kTau = 2.0 * std::numbers::pi;

void validate_signal(const AudioSignal& s, const char* op) {
  if (s.samples.empty()) throw ContractError(std::string(op) + ": signal has no samples");
  if (s.sample_rate <= 0) throw ContractError(std::string(op) + ": sample_rate must be positive");
  for (double v : s.samples) {
    if (!std::isfinite(v)) throw ContractError(std::string(op) + ": non-finite sample");
  }
}

int64_t sample_count(double duration_s, int sample_rate, const char* op) {
  if (sample_rate <= 0) throw ParamError(std::string(op) + ": sample_rate must be positive");
  if (!(duration_s > 0.0)) throw ParamError(std::string(op) + ": duration must be positive");
  const int64_t n = std::llround(duration_s * sample_rate);
  if (n < 1) throw ParamError(std::string(op) + ": duration shorter than one sample");
  return n;
}

void apply_fade(std::vector<double>& s, int sample_rate) {
  const int64_t n = static_cast<int64_t>(s.size());
  const int64_t ramp = std::min<int64_t>(sample_rate / 100, n / 4);  // 10 ms
  for (int64_t i = 0; i < ramp; ++i) {
    const double w = 0.5 - 0.5 * std::cos(std::numbers::pi * (i + 1) / (ramp + 1));
    s[static_cast<size_t>(i)] *= w;
    s[s.size() - 1 - static_cast<size_t>(i)] *= w;
  }
}

void normalize_peak(std::vector<double>& s, double peak, const char* op) {
  double mx = 0.0;
  for (double v : s) mx = std::max(mx, std::fabs(v));
  if (mx == 0.0) throw DegenerateInputError(std::string(op) + ": all-zero signal");
  const double k = peak / mx;
  for (double& v : s) v *= k;
}

double mean_square(const std::vector<double>& s) {
  double acc = 0.0;
  for (double v : s) acc += v * v;
  return acc / static_cast<double>(s.size());
}

}  // namespace

SourceKind parse_source_kind(const std::string& s) {
  if (s == "harmonic") return SourceKind::Harmonic;
  if (s == "am_tone") return SourceKind::AmTone;
  if (s == "chirp") return SourceKind::Chirp;
  throw ParamError("unknown source kind: " + s);
}

NoiseKind parse_noise_kind(const std::string& s) {
  if (s == "white") return NoiseKind::White;
  if (s == "pink") return NoiseKind::Pink;
  if (s == "babble_like") return NoiseKind::BabbleLike;
  throw ParamError("unknown noise kind: " + s);
}

AudioSignal synth_source(SourceKind kind, double duration_s, double f0_hz, uint64_t seed,
                         int sample_rate) {
  const int64_t n = sample_count(duration_s, sample_rate, "synth_source");
  if (!(f0_hz > 0.0) || f0_hz >= sample_rate / 2.0) {
    throw ParamError("synth_source: f0 must lie in (0, sample_rate/2)");
  }
  Rng rng(seed);
  std::vector<double> s(static_cast<size_t>(n), 0.0);
  const double sr = static_cast<double>(sample_rate);
  switch (kind) {
    case SourceKind::Harmonic: {
      double phases[8];
      int num_h = 0;
      for (int h = 1; h <= 8 && f0_hz * h < 0.5 * sr; ++h) phases[num_h++] = rng.uniform(0, kTau);
      for (int64_t i = 0; i < n; ++i) {
        const double t = i / sr;
        double v = 0.0;
        for (int h = 0; h < num_h; ++h) {
          v += std::sin(kTau * f0_hz * (h + 1) * t + phases[h]) / (h + 1);
        }
        s[static_cast<size_t>(i)] = v;
      }
      break;
    }
    case SourceKind::AmTone: {
      const double fm = rng.uniform(2.0, 8.0);
      const double pm = rng.uniform(0, kTau);
      const double pc = rng.uniform(0, kTau);
      for (int64_t i = 0; i < n; ++i) {
        const double t = i / sr;
        s[static_cast<size_t>(i)] =
            (0.55 + 0.45 * std::sin(kTau * fm * t + pm)) * std::sin(kTau * f0_hz * t + pc);
      }
      break;
    }
    case SourceKind::Chirp: {
      const double f1 = std::min(2.0 * f0_hz, 0.45 * sr);
      const double rate = (f1 - f0_hz) / (n / sr);
      const double p0 = rng.uniform(0, kTau);
      for (int64_t i = 0; i < n; ++i) {
        const double t = i / sr;
        s[static_cast<size_t>(i)] = std::sin(kTau * (f0_hz * t + 0.5 * rate * t * t) + p0);
      }
      break;
    }
  }
  apply_fade(s, sample_rate);
  normalize_peak(s, 0.5, "synth_source");
  return {std::move(s), sample_rate};
}

AudioSignal synth_noise(NoiseKind kind, double duration_s, uint64_t seed, int sample_rate) {
  const int64_t n = sample_count(duration_s, sample_rate, "synth_noise");
  Rng rng(seed);
  std::vector<double> s(static_cast<size_t>(n), 0.0);
  const double sr = static_cast<double>(sample_rate);
  switch (kind) {
    case NoiseKind::White: {
      for (auto& v : s) v = rng.normal();
      break;
    }
    case NoiseKind::Pink: {
      // Three-pole pinking filter over white noise.
      double b0 = 0.0, b1 = 0.0, b2 = 0.0;
      for (auto& v : s) {
        const double w = rng.normal();
        b0 = 0.99765 * b0 + w * 0.0990460;
        b1 = 0.96300 * b1 + w * 0.2965164;
        b2 = 0.57000 * b2 + w * 1.0526913;
        v = b0 + b1 + b2 + w * 0.1848;
      }
      break;
    }
    case NoiseKind::BabbleLike: {
      constexpr int kVoices = 12;
      double f[kVoices], fm[kVoices], pm[kVoices], pc[kVoices];
      for (int k = 0; k < kVoices; ++k) {
        f[k] = rng.uniform(120.0, 400.0);
        fm[k] = rng.uniform(1.5, 7.0);
        pm[k] = rng.uniform(0, kTau);
        pc[k] = rng.uniform(0, kTau);
      }
      for (int64_t i = 0; i < n; ++i) {
        const double t = i / sr;
        double v = 0.0;
        for (int k = 0; k < kVoices; ++k) {
          const double env = 0.5 + 0.5 * std::sin(kTau * fm[k] * t + pm[k]);
          double voice = 0.0;
          for (int h = 1; h <= 3; ++h) voice += std::sin(kTau * f[k] * h * t + pc[k]) / h;
          v += env * voice;
        }
        s[static_cast<size_t>(i)] = v + 0.05 * rng.normal();
      }
      break;
    }
  }
  double mean = 0.0;
  for (double v : s) mean += v;
  mean /= static_cast<double>(n);
  for (auto& v : s) v -= mean;
  const double rms = std::sqrt(mean_square(s));
  if (rms == 0.0) throw DegenerateInputError("synth_noise: all-zero signal");
  for (auto& v : s) v *= 0.1 / rms;
  return {std::move(s), sample_rate};
}

MixtureItem mix_at_snr(std::vector<AudioSignal> speakers, AudioSignal noise, double snr_db) {
  if (speakers.empty()) throw ParamError("mix_at_snr: need at least one speaker");
  validate_signal(noise, "mix_at_snr");
  for (const auto& sp : speakers) {
    validate_signal(sp, "mix_at_snr");
    if (sp.samples.size() != noise.samples.size() || sp.sample_rate != noise.sample_rate) {
      throw ShapeError("mix_at_snr: stems must share length and sample rate");
    }
  }
  size_t loudest = 0;
  double p_loudest = mean_square(speakers[0].samples);
  for (size_t c = 1; c < speakers.size(); ++c) {
    const double p = mean_square(speakers[c].samples);
    if (p > p_loudest) {
      p_loudest = p;
      loudest = c;
    }
  }
  (void)loudest;
  const double p_noise = mean_square(noise.samples);
  if (p_loudest == 0.0) throw DegenerateInputError("mix_at_snr: loudest speaker is silent");
  if (p_noise == 0.0) throw DegenerateInputError("mix_at_snr: noise is silent");
  const double scale = std::sqrt(p_loudest / (std::pow(10.0, snr_db / 10.0) * p_noise));
  for (auto& v : noise.samples) v *= scale;

  MixtureItem item;
  item.snr_db = snr_db;
  item.mixture.sample_rate = noise.sample_rate;
  item.mixture.samples.assign(noise.samples.size(), 0.0);
  for (size_t i = 0; i < noise.samples.size(); ++i) {
    double acc = noise.samples[i];
    for (const auto& sp : speakers) acc += sp.samples[i];
    item.mixture.samples[i] = acc;
  }
  item.speakers = std::move(speakers);
  item.noise = std::move(noise);
  return item;
}

// --- WAV ----------------------------------------------------------------------

namespace {

void put_u16(std::string& b, uint16_t v) {
  b.push_back(static_cast<char>(v & 0xff));
  b.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& b, uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint16_t get_u16(const std::string& b, size_t off) {
  return static_cast<uint16_t>(static_cast<uint8_t>(b[off]) |
                               (static_cast<uint8_t>(b[off + 1]) << 8));
}

uint32_t get_u32(const std::string& b, size_t off) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(b[off + i])) << (8 * i);
  return v;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path);
  return data;
}

void write_file(const std::string& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace

WavWriteInfo write_wav(const std::string& path, const AudioSignal& s, WavFormat fmt) {
  validate_signal(s, "write_wav");
  WavWriteInfo info;
  const uint32_t n = static_cast<uint32_t>(s.samples.size());
  const uint16_t bytes_per = fmt == WavFormat::Pcm16 ? 2 : 4;
  std::string body;
  body.reserve(44 + static_cast<size_t>(n) * bytes_per);
  body += "RIFF";
  put_u32(body, 36 + n * bytes_per);
  body += "WAVE";
  body += "fmt ";
  put_u32(body, 16);
  put_u16(body, fmt == WavFormat::Pcm16 ? 1 : 3);  // PCM / IEEE float
  put_u16(body, 1);                                // mono
  put_u32(body, static_cast<uint32_t>(s.sample_rate));
  put_u32(body, static_cast<uint32_t>(s.sample_rate) * bytes_per);
  put_u16(body, bytes_per);
  put_u16(body, static_cast<uint16_t>(bytes_per * 8));
  body += "data";
  put_u32(body, n * bytes_per);
  if (fmt == WavFormat::Pcm16) {
    for (double v : s.samples) {
      int64_t q = std::llround(v * 32768.0);
      if (q > 32767) {
        q = 32767;
        ++info.clipped;
      } else if (q < -32768) {
        q = -32768;
        ++info.clipped;
      }
      put_u16(body, static_cast<uint16_t>(static_cast<int16_t>(q)));
    }
  } else {
    for (double v : s.samples) {
      const float f = static_cast<float>(v);
      uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_u32(body, bits);
    }
  }
  write_file(path, body);
  return info;
}

AudioSignal read_wav(const std::string& path) {
  const std::string b = read_file(path);
  if (b.size() < 12 || b.compare(0, 4, "RIFF") != 0 || b.compare(8, 4, "WAVE") != 0) {
    throw FormatError("not a RIFF/WAVE file: " + path);
  }
  bool have_fmt = false;
  uint16_t audio_format = 0, channels = 0, bits = 0;
  uint32_t sample_rate = 0;
  size_t data_off = 0, data_size = 0;
  size_t off = 12;
  while (off + 8 <= b.size()) {
    const std::string id = b.substr(off, 4);
    const uint32_t size = get_u32(b, off + 4);
    const size_t payload = off + 8;
    if (payload + size > b.size()) throw FormatError("truncated chunk '" + id + "': " + path);
    if (id == "fmt ") {
      if (size < 16) throw FormatError("fmt chunk too small: " + path);
      audio_format = get_u16(b, payload);
      channels = get_u16(b, payload + 2);
      sample_rate = get_u32(b, payload + 4);
      bits = get_u16(b, payload + 14);
      have_fmt = true;
    } else if (id == "data") {
      data_off = payload;
      data_size = size;
    }
    off = payload + size + (size & 1);  // chunks are word-aligned
  }
  if (!have_fmt) throw FormatError("missing fmt chunk: " + path);
  if (channels != 1) {
    throw FormatError("expected mono, got " + std::to_string(channels) + " channels: " + path);
  }
  const bool pcm16 = audio_format == 1 && bits == 16;
  const bool f32 = audio_format == 3 && bits == 32;
  if (!pcm16 && !f32) {
    throw FormatError("unsupported codec (format " + std::to_string(audio_format) + ", " +
                      std::to_string(bits) + " bits): " + path);
  }
  const size_t bytes_per = pcm16 ? 2 : 4;
  if (data_size == 0) throw FormatError("no audio samples: " + path);
  if (data_size % bytes_per != 0) throw FormatError("data size not sample-aligned: " + path);
  if (sample_rate == 0) throw FormatError("zero sample rate: " + path);

  AudioSignal s;
  s.sample_rate = static_cast<int>(sample_rate);
  const size_t n = data_size / bytes_per;
  s.samples.resize(n);
  for (size_t i = 0; i < n; ++i) {
    if (pcm16) {
      const int16_t q = static_cast<int16_t>(get_u16(b, data_off + 2 * i));
      s.samples[i] = q / 32768.0;
    } else {
      const uint32_t bits32 = get_u32(b, data_off + 4 * i);
      float f;
      std::memcpy(&f, &bits32, 4);
      if (!std::isfinite(f)) throw FormatError("non-finite sample: " + path);
      s.samples[i] = static_cast<double>(f);
    }
  }
  return s;
}

// --- Dataset -------------------------------------------------------------------

namespace {

double measured_snr_db(const MixtureItem& item) {
  double p_loudest = 0.0;
  for (const auto& sp : item.speakers) p_loudest = std::max(p_loudest, mean_square(sp.samples));
  const double p_noise = mean_square(item.noise.samples);
  if (p_loudest == 0.0 || p_noise == 0.0) {
    throw DegenerateInputError("snr undefined for silent stems");
  }
  return 10.0 * std::log10(p_loudest / p_noise);
}

std::string item_path(size_t idx, const std::string& tag) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "item_%03zu_%s.wav", idx, tag.c_str());
  return buf;
}

}  // namespace

DatasetManifest make_dataset(const DatasetConfig& cfg, const std::string& out_dir) {
  if (cfg.num_speakers != 2 && cfg.num_speakers != 3) {
    throw ParamError("make_dataset: num_speakers must be 2 or 3");
  }
  if (cfg.num_items < 1) throw ParamError("make_dataset: num_items must be >= 1");
  if (cfg.snr_min_db < -20.0 || cfg.snr_max_db > 20.0 || cfg.snr_min_db > cfg.snr_max_db) {
    throw ParamError("make_dataset: snr range must lie within [-20, 20] dB");
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir + ": " + ec.message());

  // Disjoint f0 ranges per speaker slot keep the stems decorrelated.
  static constexpr double kF0Lo[3] = {150.0, 240.0, 350.0};
  static constexpr double kF0Hi[3] = {220.0, 330.0, 420.0};

  DatasetManifest manifest;
  manifest.sample_rate = cfg.sample_rate;
  manifest.num_speakers = cfg.num_speakers;
  manifest.split = cfg.split;
  manifest.base_dir = out_dir;

  for (size_t i = 0; i < static_cast<size_t>(cfg.num_items); ++i) {
    Rng rng(Rng::mix(cfg.seed, static_cast<uint64_t>(i)));
    const int kind_offset = static_cast<int>(rng.below(3));
    std::vector<AudioSignal> speakers;
    for (int c = 0; c < cfg.num_speakers; ++c) {
      const auto kind = static_cast<SourceKind>((kind_offset + c) % 3);
      const double f0 = rng.uniform(kF0Lo[c], kF0Hi[c]);
      speakers.push_back(synth_source(kind, cfg.duration_s, f0, rng.next_u64(), cfg.sample_rate));
    }
    const auto noise_kind = static_cast<NoiseKind>(rng.below(3));
    AudioSignal noise = synth_noise(noise_kind, cfg.duration_s, rng.next_u64(), cfg.sample_rate);
    const double snr = rng.uniform(cfg.snr_min_db, cfg.snr_max_db);
    MixtureItem item = mix_at_snr(std::move(speakers), std::move(noise), snr);

    ManifestItem paths;
    paths.mixture = item_path(i, "mix");
    paths.noise = item_path(i, "noise");
    for (int c = 0; c < cfg.num_speakers; ++c) {
      paths.speakers.push_back(item_path(i, "s" + std::to_string(c + 1)));
      write_wav(fs::path(out_dir) / paths.speakers.back(), item.speakers[static_cast<size_t>(c)],
                WavFormat::Float32);
    }
    write_wav(fs::path(out_dir) / paths.noise, item.noise, WavFormat::Float32);
    // Re-sum the float32-quantized stems so the stored stems add up to the
    // stored mixture to within float32 rounding of the final sum.
    AudioSignal mix_q;
    mix_q.sample_rate = cfg.sample_rate;
    mix_q.samples.assign(item.mixture.samples.size(), 0.0);
    for (size_t t = 0; t < mix_q.samples.size(); ++t) {
      double acc = static_cast<double>(static_cast<float>(item.noise.samples[t]));
      for (const auto& sp : item.speakers) {
        acc += static_cast<double>(static_cast<float>(sp.samples[t]));
      }
      mix_q.samples[t] = acc;
    }
    write_wav(fs::path(out_dir) / paths.mixture, mix_q, WavFormat::Float32);
    manifest.items.push_back(std::move(paths));
  }
  write_manifest(manifest, fs::path(out_dir) / "manifest.tsv");
  return manifest;
}

void write_manifest(const DatasetManifest& m, const std::string& path) {
  std::string out = "sample_rate=" + std::to_string(m.sample_rate) +
                    "\tnum_speakers=" + std::to_string(m.num_speakers) + "\tsplit=" + m.split +
                    "\n";
  for (const auto& item : m.items) {
    out += item.mixture;
    for (const auto& sp : item.speakers) {
      out += '\t';
      out += sp;
    }
    out += '\t';
    out += item.noise;
    out += '\n';
  }
  write_file(path, out);
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    const size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

std::string header_value(const std::string& field, const std::string& key,
                         const std::string& path) {
  if (field.compare(0, key.size() + 1, key + "=") != 0) {
    throw FormatError("manifest header expects '" + key + "=...': " + path);
  }
  return field.substr(key.size() + 1);
}

}  // namespace

DatasetManifest read_manifest(const std::string& path) {
  const std::string text = read_file(path);
  DatasetManifest m;
  m.base_dir = fs::path(path).parent_path().string();
  if (m.base_dir.empty()) m.base_dir = ".";

  std::vector<std::string> lines;
  size_t start = 0;
  while (start < text.size()) {
    size_t nl = text.find('\n', start);
    if (nl == std::string::npos) nl = text.size();
    if (nl > start) lines.push_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  if (lines.empty()) throw FormatError("empty manifest: " + path);

  const auto header = split_tabs(lines[0]);
  if (header.size() != 3) throw FormatError("manifest header must have 3 fields: " + path);
  try {
    m.sample_rate = std::stoi(header_value(header[0], "sample_rate", path));
    m.num_speakers = std::stoi(header_value(header[1], "num_speakers", path));
  } catch (const std::logic_error&) {
    throw FormatError("manifest header has non-numeric fields: " + path);
  }
  m.split = header_value(header[2], "split", path);
  if (m.sample_rate <= 0 || m.num_speakers < 1) {
    throw FormatError("manifest header values out of range: " + path);
  }

  for (size_t li = 1; li < lines.size(); ++li) {
    const auto cols = split_tabs(lines[li]);
    if (cols.size() != static_cast<size_t>(m.num_speakers) + 2) {
      throw FormatError("manifest line " + std::to_string(li + 1) + " must have " +
                        std::to_string(m.num_speakers + 2) + " paths: " + path);
    }
    ManifestItem item;
    item.mixture = cols[0];
    for (int c = 0; c < m.num_speakers; ++c) item.speakers.push_back(cols[static_cast<size_t>(c) + 1]);
    item.noise = cols.back();
    for (const auto& rel : cols) {
      const fs::path p = fs::path(m.base_dir) / rel;
      if (!fs::exists(p)) throw IoError("manifest references missing file: " + p.string());
    }
    m.items.push_back(std::move(item));
  }
  return m;
}

MixtureItem load_item(const DatasetManifest& m, size_t index) {
  if (index >= m.items.size()) {
    throw ParamError("load_item: index " + std::to_string(index) + " out of range");
  }
  const ManifestItem& paths = m.items[index];
  auto load = [&](const std::string& rel) {
    AudioSignal s = read_wav((fs::path(m.base_dir) / rel).string());
    if (s.sample_rate != m.sample_rate) {
      throw FormatError("sample rate mismatch in " + rel + ": expected " +
                        std::to_string(m.sample_rate) + ", got " + std::to_string(s.sample_rate));
    }
    return s;
  };
  MixtureItem item;
  item.mixture = load(paths.mixture);
  for (const auto& sp : paths.speakers) {
    item.speakers.push_back(load(sp));
    if (item.speakers.back().samples.size() != item.mixture.samples.size()) {
      throw FormatError("stem length mismatch in " + sp);
    }
  }
  item.noise = load(paths.noise);
  if (item.noise.samples.size() != item.mixture.samples.size()) {
    throw FormatError("stem length mismatch in " + paths.noise);
  }
  item.snr_db = measured_snr_db(item);
  return item;
}

}  // namespace noisesep
