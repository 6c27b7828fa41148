// Copyright 2026 The noisesep authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "noisesep/separator.hpp"
#include "noisesep/signals.hpp"

namespace noisesep {

// Plain energy-ratio SDR: 10*log10(||ref||^2 / ||est-ref||^2), capped to
// +/-60 dB, +60 when est == ref exactly. Unlike the scale-invariant ratio it
// has no projection step, so rescaling the estimate changes it.
double sdr(const std::vector<double>& est, const std::vector<double>& ref);
double sdr(const AudioSignal& est, const AudioSignal& ref);

// Improvement metrics relative to the unprocessed mixture.
double si_snri(const std::vector<double>& est, const std::vector<double>& ref,
               const std::vector<double>& mixture);
double si_snri(const AudioSignal& est, const AudioSignal& ref,
               const AudioSignal& mixture);
double sdri(const std::vector<double>& est, const std::vector<double>& ref,
            const std::vector<double>& mixture);
double sdri(const AudioSignal& est, const AudioSignal& ref,
            const AudioSignal& mixture);

struct EvalRow {
  std::string item_id;
  std::vector<int> permutation;  // estimate t was scored against speaker permutation[t]
  double si_snri_db = 0.0;       // mean over the human speakers
  double sdri_db = 0.0;          // mean over the human speakers
  double noise_si_snr_db = 0.0;  // only meaningful when has_noise
  bool has_noise = false;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  double mean_si_snri_db = 0.0;
  double mean_sdri_db = 0.0;
  double mean_noise_si_snr_db = 0.0;  // only meaningful when has_noise
  bool has_noise = false;
};

// Scores one utterance: picks the speaker assignment that maximizes mean
// SI-SNR (the same search the training objective uses), then averages
// SI-SNRi and SDRi over the human speakers only. When a noise estimate is
// present (ests.size() == speakers + 1) it is scored against the noise stem
// with plain SI-SNR, outside the permutation.
EvalRow evaluate_item(const std::vector<AudioSignal>& ests, const MixtureItem& item,
                      const std::string& item_id);

// Separates and scores every item. ids defaults to item0, item1, ...
EvalReport evaluate_items(SeparatorModel& model, const std::vector<MixtureItem>& items,
                          const std::vector<std::string>& ids = {});
// Manifest variant; row ids are the manifest's mixture paths.
EvalReport evaluate(SeparatorModel& model, const DatasetManifest& manifest);

// CSV with header `item,perm,si_snri_db,sdri_db,noise_si_snr_db`, one row per
// item in order. The noise column is empty when the model has no noise
// output. Byte-identical for identical inputs.
std::string render_eval_csv(const EvalReport& report);
void write_eval_csv(const std::string& path, const EvalReport& report);

// Short-time Fourier magnitudes, Hann window, frames x (frame/2 + 1),
// row-major with frame index as the slow axis.
struct Spectrogram {
  int64_t frames = 0;
  int64_t bins = 0;
  std::vector<double> mag;
  double at(int64_t frame, int64_t bin) const { return mag[frame * bins + bin]; }
};

Spectrogram stft_magnitude(const AudioSignal& signal, int64_t frame = 256,
                           int64_t hop = 64);

// Binary PGM (P5) of the log magnitudes normalized to [0, 255]; width is the
// frame count, height the bin count with bin 0 (DC) as the top row. An
// all-zero spectrogram maps to an all-zero image.
void write_spectrogram_pgm(const std::string& path, const Spectrogram& spec);
// Raw magnitudes, one CSV row per frame.
void write_spectrogram_csv(const std::string& path, const Spectrogram& spec);

// Writes <base>.pgm and <base>.csv.
Spectrogram export_spectrogram(const AudioSignal& signal, const std::string& base_path,
                               int64_t frame = 256, int64_t hop = 64);

}  // namespace noisesep
