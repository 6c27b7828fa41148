// Copyright 2026 The noisesep authors
// SPDX-License-Identifier: Apache-2.0
#include "noisesep/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <numeric>
#include <sstream>

#include "noisesep/errors.hpp"
#include "noisesep/objective.hpp"

namespace noisesep {
namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void check_pair(const std::vector<double>& est, const std::vector<double>& ref,
                const char* op) {
  if (est.size() != ref.size()) {
    throw ShapeError(std::string(op) + ": estimate has " + std::to_string(est.size()) +
                     " samples, reference has " + std::to_string(ref.size()));
  }
  if (est.empty()) throw ShapeError(std::string(op) + ": empty signals");
}

std::string fmt_g10(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string perm_string(const std::vector<int>& perm) {
  std::string s;
  for (int p : perm) s += static_cast<char>('0' + p);
  return s;
}

}  // namespace

double sdr(const std::vector<double>& est, const std::vector<double>& ref) {
  check_pair(est, ref, "sdr");
  const double ref_pow = dot(ref, ref);
  if (ref_pow == 0.0) {
    throw DegenerateInputError("sdr: reference signal has zero energy");
  }
  double resid_pow = 0.0;
  for (size_t i = 0; i < est.size(); ++i) {
    const double d = est[i] - ref[i];
    resid_pow += d * d;
  }
  if (resid_pow == 0.0) return kSiSnrCapDb;
  const double value = 10.0 * std::log10(ref_pow / resid_pow);
  return std::clamp(value, -kSiSnrCapDb, kSiSnrCapDb);
}

double sdr(const AudioSignal& est, const AudioSignal& ref) {
  return sdr(est.samples, ref.samples);
}

double si_snri(const std::vector<double>& est, const std::vector<double>& ref,
               const std::vector<double>& mixture) {
  return si_snr(est, ref) - si_snr(mixture, ref);
}

double si_snri(const AudioSignal& est, const AudioSignal& ref,
               const AudioSignal& mixture) {
  return si_snri(est.samples, ref.samples, mixture.samples);
}

double sdri(const std::vector<double>& est, const std::vector<double>& ref,
            const std::vector<double>& mixture) {
  return sdr(est, ref) - sdr(mixture, ref);
}

double sdri(const AudioSignal& est, const AudioSignal& ref,
            const AudioSignal& mixture) {
  return sdri(est.samples, ref.samples, mixture.samples);
}

EvalRow evaluate_item(const std::vector<AudioSignal>& ests, const MixtureItem& item,
                      const std::string& item_id) {
  const size_t c = item.speakers.size();
  if (c == 0) throw ContractError("evaluate_item: item has no speaker stems");
  const bool has_noise = ests.size() == c + 1;
  if (!has_noise && ests.size() != c) {
    throw ContractError("evaluate_item: got " + std::to_string(ests.size()) +
                        " estimates for " + std::to_string(c) + " speakers");
  }
  const size_t t_len = item.mixture.samples.size();
  for (const AudioSignal& e : ests) {
    if (e.samples.size() != t_len) {
      throw ShapeError("evaluate_item: estimate length " +
                       std::to_string(e.samples.size()) + " != mixture length " +
                       std::to_string(t_len));
    }
  }

  // Reuse the training objective's assignment search so evaluation aligns
  // sources exactly the way the loss does.
  std::vector<std::vector<double>> est_v, ref_v;
  for (const AudioSignal& e : ests) est_v.push_back(e.samples);
  for (const AudioSignal& s : item.speakers) ref_v.push_back(s.samples);
  if (has_noise) ref_v.push_back(item.noise.samples);
  UpitResult upit = upit_si_snr_loss(est_v, ref_v, static_cast<int>(c));

  EvalRow row;
  row.item_id = item_id;
  row.permutation = upit.permutation;
  row.has_noise = has_noise;
  double si_sum = 0.0, sdr_sum = 0.0;
  for (size_t t = 0; t < c; ++t) {
    const std::vector<double>& ref =
        item.speakers[static_cast<size_t>(upit.permutation[t])].samples;
    si_sum += si_snri(est_v[t], ref, item.mixture.samples);
    sdr_sum += sdri(est_v[t], ref, item.mixture.samples);
  }
  row.si_snri_db = si_sum / static_cast<double>(c);
  row.sdri_db = sdr_sum / static_cast<double>(c);
  if (has_noise) row.noise_si_snr_db = si_snr(est_v[c], item.noise.samples);
  return row;
}

EvalReport evaluate_items(SeparatorModel& model, const std::vector<MixtureItem>& items,
                          const std::vector<std::string>& ids) {
  if (items.empty()) throw ParamError("evaluate_items: no items");
  if (!ids.empty() && ids.size() != items.size()) {
    throw ParamError("evaluate_items: " + std::to_string(ids.size()) + " ids for " +
                     std::to_string(items.size()) + " items");
  }
  const int c = model.config().num_speakers;
  for (size_t i = 0; i < items.size(); ++i) {
    if (static_cast<int>(items[i].speakers.size()) != c) {
      throw ConfigError("evaluate_items: item " + std::to_string(i) + " has " +
                        std::to_string(items[i].speakers.size()) +
                        " speakers, model separates " + std::to_string(c));
    }
  }
  EvalReport report;
  report.has_noise = model.config().noise_speaker;
  // Items are independent and separation only reads the parameters, so the
  // per-item work fans out; rows are collected in manifest order.
  std::vector<std::future<EvalRow>> rows;
  rows.reserve(items.size());
  for (size_t i = 0; i < items.size(); ++i) {
    rows.push_back(std::async(std::launch::async, [&model, &items, &ids, i] {
      const std::string id = ids.empty() ? "item" + std::to_string(i) : ids[i];
      SeparationResult sep = model.separate(items[i].mixture);
      return evaluate_item(sep.sources, items[i], id);
    }));
  }
  for (auto& row : rows) report.rows.push_back(row.get());
  double si = 0.0, sd = 0.0, nz = 0.0;
  for (const EvalRow& r : report.rows) {
    si += r.si_snri_db;
    sd += r.sdri_db;
    nz += r.noise_si_snr_db;
  }
  const double n = static_cast<double>(report.rows.size());
  report.mean_si_snri_db = si / n;
  report.mean_sdri_db = sd / n;
  report.mean_noise_si_snr_db = report.has_noise ? nz / n : 0.0;
  return report;
}

EvalReport evaluate(SeparatorModel& model, const DatasetManifest& manifest) {
  if (manifest.num_speakers != model.config().num_speakers) {
    throw ConfigError("evaluate: manifest has " +
                      std::to_string(manifest.num_speakers) +
                      " speakers, model separates " +
                      std::to_string(model.config().num_speakers));
  }
  std::vector<MixtureItem> items;
  std::vector<std::string> ids;
  for (size_t i = 0; i < manifest.items.size(); ++i) {
    items.push_back(load_item(manifest, i));
    ids.push_back(manifest.items[i].mixture);
  }
  return evaluate_items(model, items, ids);
}

std::string render_eval_csv(const EvalReport& report) {
  std::string out = "item,perm,si_snri_db,sdri_db,noise_si_snr_db\n";
  for (const EvalRow& r : report.rows) {
    out += r.item_id;
    out += ',';
    out += perm_string(r.permutation);
    out += ',';
    out += fmt_g10(r.si_snri_db);
    out += ',';
    out += fmt_g10(r.sdri_db);
    out += ',';
    if (r.has_noise) out += fmt_g10(r.noise_si_snr_db);
    out += '\n';
  }
  return out;
}

void write_eval_csv(const std::string& path, const EvalReport& report) {
  std::ofstream f(path, std::ios::trunc | std::ios::binary);
  if (!f) throw IoError("cannot open report for writing: " + path);
  const std::string text = render_eval_csv(report);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  f.flush();
  if (!f) throw IoError("failed writing report: " + path);
}

Spectrogram stft_magnitude(const AudioSignal& signal, int64_t frame, int64_t hop) {
  if (frame < 2 || frame % 2 != 0) {
    throw ParamError("stft_magnitude: frame must be even and >= 2, got " +
                     std::to_string(frame));
  }
  if (hop < 1) throw ParamError("stft_magnitude: hop must be >= 1");
  const int64_t t_len = static_cast<int64_t>(signal.samples.size());
  if (t_len < frame) {
    throw ParamError("stft_magnitude: signal of " + std::to_string(t_len) +
                     " samples is shorter than one frame of " + std::to_string(frame));
  }

  Spectrogram spec;
  spec.frames = (t_len - frame) / hop + 1;
  spec.bins = frame / 2 + 1;
  spec.mag.assign(static_cast<size_t>(spec.frames * spec.bins), 0.0);

  std::vector<double> window(static_cast<size_t>(frame));
  for (int64_t n = 0; n < frame; ++n) {
    window[n] = 0.5 - 0.5 * std::cos(kTwoPi * static_cast<double>(n) /
                                     static_cast<double>(frame));
  }
  std::vector<double> buf(static_cast<size_t>(frame));
  for (int64_t f = 0; f < spec.frames; ++f) {
    const int64_t off = f * hop;
    for (int64_t n = 0; n < frame; ++n) buf[n] = signal.samples[off + n] * window[n];
    for (int64_t k = 0; k < spec.bins; ++k) {
      double re = 0.0, im = 0.0;
      const double w = kTwoPi * static_cast<double>(k) / static_cast<double>(frame);
      for (int64_t n = 0; n < frame; ++n) {
        const double phase = w * static_cast<double>(n);
        re += buf[n] * std::cos(phase);
        im -= buf[n] * std::sin(phase);
      }
      spec.mag[f * spec.bins + k] = std::hypot(re, im);
    }
  }
  return spec;
}

void write_spectrogram_pgm(const std::string& path, const Spectrogram& spec) {
  std::vector<double> logmag(spec.mag.size());
  for (size_t i = 0; i < spec.mag.size(); ++i) {
    logmag[i] = std::log10(spec.mag[i] + 1e-12);
  }
  const auto [lo_it, hi_it] = std::minmax_element(logmag.begin(), logmag.end());
  const double lo = *lo_it, hi = *hi_it;
  const double span = hi - lo;

  std::string out = "P5\n" + std::to_string(spec.frames) + " " +
                    std::to_string(spec.bins) + "\n255\n";
  // Rows are frequency bins (DC on top), columns are frames.
  for (int64_t b = 0; b < spec.bins; ++b) {
    for (int64_t f = 0; f < spec.frames; ++f) {
      double px = 0.0;
      if (span > 0.0) {
        px = std::round(255.0 * (logmag[f * spec.bins + b] - lo) / span);
      }
      out.push_back(static_cast<char>(static_cast<unsigned char>(px)));
    }
  }
  std::ofstream f(path, std::ios::trunc | std::ios::binary);
  if (!f) throw IoError("cannot open image for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  f.flush();
  if (!f) throw IoError("failed writing image: " + path);
}

void write_spectrogram_csv(const std::string& path, const Spectrogram& spec) {
  std::string out;
  for (int64_t f = 0; f < spec.frames; ++f) {
    for (int64_t k = 0; k < spec.bins; ++k) {
      if (k > 0) out += ',';
      out += fmt_g10(spec.mag[f * spec.bins + k]);
    }
    out += '\n';
  }
  std::ofstream file(path, std::ios::trunc | std::ios::binary);
  if (!file) throw IoError("cannot open spectrogram CSV for writing: " + path);
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  file.flush();
  if (!file) throw IoError("failed writing spectrogram CSV: " + path);
}

Spectrogram export_spectrogram(const AudioSignal& signal, const std::string& base_path,
                               int64_t frame, int64_t hop) {
  Spectrogram spec = stft_magnitude(signal, frame, hop);
  write_spectrogram_pgm(base_path + ".pgm", spec);
  write_spectrogram_csv(base_path + ".csv", spec);
  return spec;
}

}  // namespace noisesep
