// Copyright 2026 The noisesep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "noisesep/errors.hpp"

namespace noisesep {

struct AudioSignal {
  std::vector<double> samples;  // dimensionless amplitudes, nominally in [-1, 1]
  int sample_rate = 8000;
};

// A mixture with its ground-truth stems. The noise stem is stored already
// scaled so that mixture == sum(speakers) + noise elementwise.
struct MixtureItem {
  AudioSignal mixture;
  std::vector<AudioSignal> speakers;
  AudioSignal noise;
  double snr_db = 0.0;  // between the loudest speaker and the scaled noise
};

struct ManifestItem {
  std::string mixture;
  std::vector<std::string> speakers;
  std::string noise;
};

struct DatasetManifest {
  int sample_rate = 8000;
  int num_speakers = 2;
  std::string split = "train";
  std::vector<ManifestItem> items;  // paths relative to base_dir
  std::string base_dir;             // directory of the manifest file; not serialized
};

enum class SourceKind { Harmonic, AmTone, Chirp };
enum class NoiseKind { White, Pink, BabbleLike };

SourceKind parse_source_kind(const std::string& s);
NoiseKind parse_noise_kind(const std::string& s);

// Deterministic parametric stand-ins for speech. Peak normalized to 0.5.
AudioSignal synth_source(SourceKind kind, double duration_s, double f0_hz, uint64_t seed,
                         int sample_rate = 8000);
// Zero-mean noise, RMS normalized to 0.1.
AudioSignal synth_noise(NoiseKind kind, double duration_s, uint64_t seed,
                        int sample_rate = 8000);

// Rescales noise so 10*log10(P_loudest / P_noise) == snr_db, with P the mean
// square power and ties on loudest broken by lowest speaker index. Speakers
// are returned unscaled.
MixtureItem mix_at_snr(std::vector<AudioSignal> speakers, AudioSignal noise, double snr_db);

enum class WavFormat { Pcm16, Float32 };

struct WavWriteInfo {
  int64_t clipped = 0;  // samples saturated while quantizing to pcm16
};

// Mono RIFF/WAVE, PCM16 little-endian or IEEE float32.
WavWriteInfo write_wav(const std::string& path, const AudioSignal& s, WavFormat fmt);
AudioSignal read_wav(const std::string& path);

struct DatasetConfig {
  int num_speakers = 2;  // 2 or 3
  int num_items = 8;
  double duration_s = 1.0;
  double snr_min_db = -6.0;
  double snr_max_db = 3.0;
  int sample_rate = 8000;
  std::string split = "train";
  uint64_t seed = 0;
};

// Writes float32 stems + mixtures plus `manifest.tsv` into out_dir.
// Byte-identical for identical (config, seed). Float32 keeps the
// stems-sum-to-mixture invariant inside the 1e-6 tolerance; pcm16 would not.
DatasetManifest make_dataset(const DatasetConfig& cfg, const std::string& out_dir);

void write_manifest(const DatasetManifest& m, const std::string& path);
// Parses the manifest and verifies every referenced file exists.
DatasetManifest read_manifest(const std::string& path);
// Loads one item's WAVs; snr_db is re-measured from the stems.
MixtureItem load_item(const DatasetManifest& m, size_t index);

}  // namespace noisesep
