// Copyright 2026 The noisesep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "noisesep/rng.hpp"
#include "noisesep/signals.hpp"

using namespace noisesep;
namespace fs = std::filesystem;

namespace {

double mean_square(const std::vector<double>& s) {
  double acc = 0.0;
  for (double v : s) acc += v * v;
  return acc / static_cast<double>(s.size());
}

double peak(const std::vector<double>& s) {
  double m = 0.0;
  for (double v : s) m = std::max(m, std::fabs(v));
  return m;
}

// Max normalized cross-correlation over lags in [-max_lag, max_lag].
double max_xcorr(const std::vector<double>& a, const std::vector<double>& b, int max_lag) {
  const double na = std::sqrt(mean_square(a) * a.size());
  const double nb = std::sqrt(mean_square(b) * b.size());
  double best = 0.0;
  for (int lag = -max_lag; lag <= max_lag; ++lag) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
      const int64_t j = static_cast<int64_t>(i) + lag;
      if (j >= 0 && j < static_cast<int64_t>(b.size())) acc += a[i] * b[static_cast<size_t>(j)];
    }
    best = std::max(best, std::fabs(acc) / (na * nb));
  }
  return best;
}

// Periodogram band energy, sampled every `stride` DFT bins.
double band_energy(const std::vector<double>& s, int sr, double flo, double fhi, size_t stride) {
  const size_t n = s.size();
  double total = 0.0;
  for (size_t k = 1; k < n / 2; k += stride) {
    const double f = static_cast<double>(k) * sr / static_cast<double>(n);
    if (f < flo || f > fhi) continue;
    double re = 0.0, im = 0.0;
    const double w = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    for (size_t t = 0; t < n; ++t) {
      re += s[t] * std::cos(w * static_cast<double>(t));
      im -= s[t] * std::sin(w * static_cast<double>(t));
    }
    total += re * re + im * im;
  }
  return total;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::path("sigtest_tmp") / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void put_u16(std::string& b, uint16_t v) {
  b.push_back(static_cast<char>(v & 0xff));
  b.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& b, uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::string wav_header(uint16_t fmt, uint16_t channels, uint32_t sr, uint16_t bits,
                       uint32_t data_size) {
  std::string b = "RIFF";
  put_u32(b, 36 + data_size);
  b += "WAVEfmt ";
  put_u32(b, 16);
  put_u16(b, fmt);
  put_u16(b, channels);
  put_u32(b, sr);
  put_u32(b, sr * channels * bits / 8);
  put_u16(b, static_cast<uint16_t>(channels * bits / 8));
  put_u16(b, bits);
  b += "data";
  put_u32(b, data_size);
  return b;
}

}  // namespace

TEST_CASE("synth_source length, peak, determinism") {
  AudioSignal a = synth_source(SourceKind::Harmonic, 1.0, 220.0, 7);
  CHECK(a.samples.size() == 8000);
  CHECK(a.sample_rate == 8000);
  CHECK(peak(a.samples) == doctest::Approx(0.5).epsilon(1e-9));
  AudioSignal b = synth_source(SourceKind::Harmonic, 1.0, 220.0, 7);
  CHECK(a.samples == b.samples);

  CHECK_THROWS_AS(synth_source(SourceKind::Harmonic, 0.0, 220.0, 7), ParamError);
  CHECK_THROWS_AS(synth_source(SourceKind::Harmonic, 1.0, 4000.0, 7), ParamError);
  CHECK_THROWS_AS(synth_source(SourceKind::Harmonic, 1.0, -5.0, 7), ParamError);
}

TEST_CASE("chirp autocorrelation at lag zero is one") {
  AudioSignal c = synth_source(SourceKind::Chirp, 0.5, 300.0, 1);
  double num = 0.0, den = 0.0;
  for (double v : c.samples) {
    num += v * v;
    den += v * v;
  }
  CHECK(num / den == 1.0);
}

TEST_CASE("distinct kinds and f0 stay decorrelated") {
  AudioSignal h = synth_source(SourceKind::Harmonic, 1.0, 180.0, 11);
  AudioSignal a = synth_source(SourceKind::AmTone, 1.0, 290.0, 12);
  AudioSignal c = synth_source(SourceKind::Chirp, 1.0, 390.0, 13);
  CHECK(max_xcorr(h.samples, a.samples, 256) < 0.5);
  CHECK(max_xcorr(h.samples, c.samples, 256) < 0.5);
  CHECK(max_xcorr(a.samples, c.samples, 256) < 0.5);
}

TEST_CASE("synth_noise zero mean and per-seed variation") {
  for (auto kind : {NoiseKind::White, NoiseKind::Pink, NoiseKind::BabbleLike}) {
    AudioSignal n = synth_noise(kind, 1.0, 3);
    CHECK(n.samples.size() == 8000);
    double mean = 0.0;
    for (double v : n.samples) mean += v;
    mean /= static_cast<double>(n.samples.size());
    const double rms = std::sqrt(mean_square(n.samples));
    CHECK(std::fabs(mean) < 1e-3 * rms);
  }
  AudioSignal n3 = synth_noise(NoiseKind::White, 1.0, 3);
  AudioSignal n4 = synth_noise(NoiseKind::White, 1.0, 4);
  CHECK(n3.samples != n4.samples);
  CHECK_THROWS_AS(synth_noise(NoiseKind::White, -1.0, 3), ParamError);
}

TEST_CASE("pink noise concentrates energy at low frequencies") {
  AudioSignal p = synth_noise(NoiseKind::Pink, 2.0, 5);
  const double low = band_energy(p.samples, p.sample_rate, 50.0, 500.0, 5);
  const double high = band_energy(p.samples, p.sample_rate, 2000.0, 3950.0, 5);
  CHECK(low > high);
}

TEST_CASE("mix_at_snr scales noise to the requested snr") {
  const size_t n = 4000;
  std::vector<AudioSignal> speakers(2);
  speakers[0].samples.assign(n, 0.2);  // power 0.04
  speakers[1].samples.assign(n, 0.1);  // power 0.01
  AudioSignal noise;
  noise.samples.resize(n);
  for (size_t i = 0; i < n; ++i) noise.samples[i] = (i % 2 == 0) ? 1.0 : -1.0;  // power 1.0

  MixtureItem at0 = mix_at_snr(speakers, noise, 0.0);
  CHECK(mean_square(at0.noise.samples) == doctest::Approx(0.04).epsilon(1e-12));

  MixtureItem at3 = mix_at_snr(speakers, noise, 3.0);
  CHECK(mean_square(at3.noise.samples) ==
        doctest::Approx(0.04 / std::pow(10.0, 0.3)).epsilon(1e-12));

  for (size_t i = 0; i < n; ++i) {
    const double resum =
        at3.speakers[0].samples[i] + at3.speakers[1].samples[i] + at3.noise.samples[i];
    REQUIRE(std::fabs(resum - at3.mixture.samples[i]) <= 1e-6);
  }
}

TEST_CASE("mix_at_snr measured snr matches requested within 1e-9 dB") {
  Rng rng(99);
  for (int trial = 0; trial < 30; ++trial) {
    const int c = 2 + static_cast<int>(rng.below(2));
    std::vector<AudioSignal> speakers;
    for (int s = 0; s < c; ++s) {
      speakers.push_back(synth_source(static_cast<SourceKind>(rng.below(3)), 0.25,
                                      rng.uniform(100.0, 400.0), rng.next_u64()));
    }
    AudioSignal noise = synth_noise(static_cast<NoiseKind>(rng.below(3)), 0.25, rng.next_u64());
    const double snr = rng.uniform(-20.0, 20.0);
    MixtureItem item = mix_at_snr(std::move(speakers), std::move(noise), snr);
    double p_loudest = 0.0;
    for (const auto& sp : item.speakers) p_loudest = std::max(p_loudest, mean_square(sp.samples));
    const double measured = 10.0 * std::log10(p_loudest / mean_square(item.noise.samples));
    REQUIRE(std::fabs(measured - snr) <= 1e-9);
  }
}

TEST_CASE("mix_at_snr rejects degenerate stems") {
  const size_t n = 100;
  std::vector<AudioSignal> speakers(2);
  speakers[0].samples.assign(n, 0.0);
  speakers[1].samples.assign(n, 0.0);
  AudioSignal noise;
  noise.samples.assign(n, 0.5);
  CHECK_THROWS_AS(mix_at_snr(speakers, noise, 0.0), DegenerateInputError);

  speakers[0].samples.assign(n, 0.5);
  AudioSignal silent;
  silent.samples.assign(n, 0.0);
  CHECK_THROWS_AS(mix_at_snr(speakers, silent, 0.0), DegenerateInputError);

  AudioSignal shorter;
  shorter.samples.assign(n / 2, 0.5);
  CHECK_THROWS_AS(mix_at_snr(speakers, shorter, 0.0), ShapeError);
}

TEST_CASE("wav pcm16 round trip within quantization bound") {
  const fs::path dir = fresh_dir("wav_pcm");
  AudioSignal s;
  s.samples = {0.0, 0.5, -0.5};
  WavWriteInfo info = write_wav(dir / "t.wav", s, WavFormat::Pcm16);
  CHECK(info.clipped == 0);
  AudioSignal r = read_wav(dir / "t.wav");
  REQUIRE(r.samples.size() == 3);
  CHECK(r.sample_rate == 8000);
  for (size_t i = 0; i < 3; ++i) CHECK(std::fabs(r.samples[i] - s.samples[i]) <= 1.0 / 32768.0);

  Rng rng(31);
  AudioSignal big;
  big.samples.resize(2048);
  for (auto& v : big.samples) v = rng.uniform(-1.0, 1.0);
  write_wav(dir / "big.wav", big, WavFormat::Pcm16);
  AudioSignal rb = read_wav(dir / "big.wav");
  REQUIRE(rb.samples.size() == big.samples.size());
  for (size_t i = 0; i < rb.samples.size(); ++i) {
    REQUIRE(std::fabs(rb.samples[i] - big.samples[i]) <= 1.0 / 32768.0);
  }
}

TEST_CASE("wav float32 round trip is bit-identical") {
  const fs::path dir = fresh_dir("wav_f32");
  AudioSignal s;
  Rng rng(32);
  s.samples.resize(777);
  for (auto& v : s.samples) v = static_cast<double>(static_cast<float>(rng.uniform(-1.0, 1.0)));
  write_wav(dir / "t.wav", s, WavFormat::Float32);
  AudioSignal r = read_wav(dir / "t.wav");
  CHECK(r.samples == s.samples);
}

TEST_CASE("wav clipping is reported on write") {
  const fs::path dir = fresh_dir("wav_clip");
  AudioSignal s;
  s.samples = {1.5, 0.0, -2.0, 1.0};  // 1.0 maps to 32768 -> clamped too
  WavWriteInfo info = write_wav(dir / "t.wav", s, WavFormat::Pcm16);
  CHECK(info.clipped == 3);
  AudioSignal r = read_wav(dir / "t.wav");
  CHECK(r.samples[0] == doctest::Approx(32767.0 / 32768.0));
  CHECK(r.samples[2] == -1.0);
}

TEST_CASE("wav format errors") {
  const fs::path dir = fresh_dir("wav_bad");
  {
    std::ofstream out(dir / "empty.wav", std::ios::binary);
    out << wav_header(1, 1, 8000, 16, 0);
  }
  CHECK_THROWS_AS(read_wav(dir / "empty.wav"), FormatError);
  {
    std::string b = wav_header(1, 2, 8000, 16, 8);
    b.append(8, '\0');
    std::ofstream out(dir / "stereo.wav", std::ios::binary);
    out << b;
  }
  CHECK_THROWS_AS(read_wav(dir / "stereo.wav"), FormatError);
  {
    std::string b = wav_header(1, 1, 8000, 8, 8);
    b.append(8, '\0');
    std::ofstream out(dir / "pcm8.wav", std::ios::binary);
    out << b;
  }
  CHECK_THROWS_AS(read_wav(dir / "pcm8.wav"), FormatError);
  {
    std::ofstream out(dir / "noise.bin", std::ios::binary);
    out << "this is not audio";
  }
  CHECK_THROWS_AS(read_wav(dir / "noise.bin"), FormatError);
  {
    std::string b = wav_header(1, 1, 8000, 16, 100);  // declares more than present
    b.append(10, '\0');
    std::ofstream out(dir / "trunc.wav", std::ios::binary);
    out << b;
  }
  CHECK_THROWS_AS(read_wav(dir / "trunc.wav"), FormatError);
  CHECK_THROWS_AS(read_wav(dir / "does_not_exist.wav"), IoError);
}

TEST_CASE("make_dataset writes the advertised files deterministically") {
  DatasetConfig cfg;
  cfg.num_speakers = 2;
  cfg.num_items = 8;
  cfg.duration_s = 1.0;
  cfg.seed = 0;
  const fs::path dir_a = fresh_dir("ds_a");
  const fs::path dir_b = fresh_dir("ds_b");
  DatasetManifest ma = make_dataset(cfg, dir_a.string());
  DatasetManifest mb = make_dataset(cfg, dir_b.string());

  CHECK(ma.items.size() == 8);
  size_t wavs = 0;
  for (const auto& e : fs::directory_iterator(dir_a)) {
    if (e.path().extension() == ".wav") ++wavs;
  }
  CHECK(wavs == 8 * 4);  // mixture + 2 speakers + noise per item
  CHECK(fs::exists(dir_a / "manifest.tsv"));

  CHECK(slurp(dir_a / "manifest.tsv") == slurp(dir_b / "manifest.tsv"));
  for (const auto& item : ma.items) {
    CHECK(slurp(dir_a / item.mixture) == slurp(dir_b / item.mixture));
    CHECK(slurp(dir_a / item.noise) == slurp(dir_b / item.noise));
  }
  (void)mb;
}

TEST_CASE("dataset items respect the snr range and stem-sum invariant") {
  DatasetConfig cfg;
  cfg.num_items = 6;
  cfg.duration_s = 0.5;
  cfg.snr_min_db = -6.0;
  cfg.snr_max_db = 3.0;
  cfg.seed = 17;
  const fs::path dir = fresh_dir("ds_snr");
  DatasetManifest m = make_dataset(cfg, dir.string());
  DatasetManifest loaded = read_manifest((dir / "manifest.tsv").string());
  CHECK(loaded.sample_rate == m.sample_rate);
  CHECK(loaded.num_speakers == 2);
  CHECK(loaded.split == "train");
  CHECK(loaded.items.size() == m.items.size());

  for (size_t i = 0; i < loaded.items.size(); ++i) {
    MixtureItem item = load_item(loaded, i);
    CHECK(item.snr_db >= -6.0 - 1e-6);
    CHECK(item.snr_db <= 3.0 + 1e-6);
    for (size_t t = 0; t < item.mixture.samples.size(); ++t) {
      double resum = item.noise.samples[t];
      for (const auto& sp : item.speakers) resum += sp.samples[t];
      REQUIRE(std::fabs(resum - item.mixture.samples[t]) <= 1e-6);
    }
  }
}

TEST_CASE("make_dataset validates its config") {
  DatasetConfig cfg;
  cfg.num_speakers = 4;
  CHECK_THROWS_AS(make_dataset(cfg, "sigtest_tmp/never"), ParamError);
  cfg.num_speakers = 2;
  cfg.snr_min_db = -30.0;
  CHECK_THROWS_AS(make_dataset(cfg, "sigtest_tmp/never"), ParamError);
  cfg.snr_min_db = 3.0;
  cfg.snr_max_db = -6.0;
  CHECK_THROWS_AS(make_dataset(cfg, "sigtest_tmp/never"), ParamError);
}

TEST_CASE("manifest referencing a missing file is rejected") {
  const fs::path dir = fresh_dir("ds_missing");
  DatasetConfig cfg;
  cfg.num_items = 1;
  cfg.duration_s = 0.25;
  make_dataset(cfg, dir.string());
  fs::remove(dir / "item_000_noise.wav");
  CHECK_THROWS_AS(read_manifest((dir / "manifest.tsv").string()), IoError);
}
