// Copyright 2026 The noisesep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "noisesep/errors.hpp"
#include "noisesep/metrics.hpp"
#include "noisesep/objective.hpp"
#include "noisesep/rng.hpp"

using namespace noisesep;
namespace fs = std::filesystem;

namespace {

std::vector<double> random_signal(Rng& rng, size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

MixtureItem make_item(double dur_s, uint64_t seed) {
  std::vector<AudioSignal> speakers{
      synth_source(SourceKind::Harmonic, dur_s, 180.0, seed),
      synth_source(SourceKind::AmTone, dur_s, 290.0, seed + 1)};
  AudioSignal noise = synth_noise(NoiseKind::White, dur_s, seed + 2);
  return mix_at_snr(std::move(speakers), std::move(noise), 0.0);
}

SeparatorConfig tiny_model_config() {
  SeparatorConfig cfg;
  cfg.filters = 8;
  cfg.kernel = 16;
  cfg.stride = 8;
  cfg.num_speakers = 2;
  cfg.noise_speaker = true;
  cfg.chunk_size = 4;
  cfg.blocks = 1;
  cfg.hidden = 8;
  cfg.embed_dim = 8;
  return cfg;
}

std::string temp_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("noisesep_metrics_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(static_cast<bool>(f));
  std::ostringstream buf;
  buf << f.rdbuf();
  return buf.str();
}

}  // namespace

TEST_CASE("plain SDR hand values and caps") {
  // est=[1,1], ref=[1,0]: residual [0,1] -> 0 dB.
  CHECK(sdr(std::vector<double>{1, 1}, {1, 0}) == doctest::Approx(0.0).epsilon(1e-12));
  // mixture=[1,0.5] vs ref percent: 10*log10(1/0.25).
  CHECK(sdr(std::vector<double>{1, 0.5}, {1, 0}) ==
        doctest::Approx(10.0 * std::log10(4.0)).epsilon(1e-12));
  CHECK(sdri(std::vector<double>{1, 1}, {1, 0}, {1, 0.5}) ==
        doctest::Approx(-10.0 * std::log10(4.0)).epsilon(1e-12));

  // Exact match caps at +60; a far-off estimate floors at -60.
  std::vector<double> ref{0.3, -0.2, 0.9};
  CHECK(sdr(ref, ref) == 60.0);
  std::vector<double> far{1e6, -1e6, 1e6};
  CHECK(sdr(far, ref) == -60.0);

  CHECK_THROWS_AS(sdr(std::vector<double>{0, 0}, {0, 0}), DegenerateInputError);
  CHECK_THROWS_AS(sdr(std::vector<double>{1, 2, 3}, {1, 2}), ShapeError);
}

TEST_CASE("SDR is scale sensitive where SI-SNR is not") {
  Rng rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> ref = random_signal(rng, 64);
    std::vector<double> est = ref;
    for (auto& x : est) x += 0.3 * rng.uniform(-1.0, 1.0);
    std::vector<double> scaled = est;
    for (auto& x : scaled) x *= 2.0;

    CHECK(std::abs(si_snr(scaled, ref) - si_snr(est, ref)) < 1e-6);
    CHECK(std::abs(sdr(scaled, ref) - sdr(est, ref)) > 0.1);
  }
}

TEST_CASE("improvement metrics are zero for the mixture itself") {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> ref = random_signal(rng, 128);
    std::vector<double> mix = ref;
    for (auto& x : mix) x += 0.5 * rng.uniform(-1.0, 1.0);

    CHECK(si_snri(mix, ref, mix) == 0.0);  // exact self-difference
    CHECK(sdri(mix, ref, mix) == 0.0);

    // A perfect estimate reports the cap minus the mixture term.
    CHECK(si_snri(ref, ref, mix) ==
          doctest::Approx(60.0 - si_snr(mix, ref)).epsilon(1e-12));
    CHECK(sdri(ref, ref, mix) == doctest::Approx(60.0 - sdr(mix, ref)).epsilon(1e-12));

    // Compositional oracle: the improvement is literally the two-call difference.
    std::vector<double> est = random_signal(rng, 128);
    CHECK(si_snri(est, ref, mix) ==
          doctest::Approx(si_snr(est, ref) - si_snr(mix, ref)).epsilon(1e-12));
    CHECK(sdri(est, ref, mix) ==
          doctest::Approx(sdr(est, ref) - sdr(mix, ref)).epsilon(1e-12));
  }
}

TEST_CASE("item scoring aligns speakers and fixes the noise slot") {
  MixtureItem item = make_item(0.25, 5);

  // Perfect estimates in crossed order: the search must un-cross them.
  std::vector<AudioSignal> ests{item.speakers[1], item.speakers[0], item.noise};
  EvalRow row = evaluate_item(ests, item, "probe");
  CHECK(row.item_id == "probe");
  REQUIRE(row.permutation.size() == 2);
  CHECK(row.permutation[0] == 1);
  CHECK(row.permutation[1] == 0);
  CHECK(row.has_noise);
  CHECK(row.noise_si_snr_db == 60.0);
  // Every speaker SI-SNR hits the cap, so the improvement is 60 minus the
  // mixture term, averaged over the two speakers.
  const double expect_si = 0.5 * ((60.0 - si_snr(item.mixture, item.speakers[1])) +
                                  (60.0 - si_snr(item.mixture, item.speakers[0])));
  CHECK(row.si_snri_db == doctest::Approx(expect_si).epsilon(1e-12));

  // Identity order gives the identity permutation and identical metrics.
  std::vector<AudioSignal> straight{item.speakers[0], item.speakers[1], item.noise};
  EvalRow row2 = evaluate_item(straight, item, "probe");
  CHECK(row2.permutation[0] == 0);
  CHECK(row2.permutation[1] == 1);
  CHECK(row2.si_snri_db == doctest::Approx(row.si_snri_db).epsilon(1e-12));
  CHECK(row2.sdri_db == doctest::Approx(row.sdri_db).epsilon(1e-12));
  CHECK(row2.noise_si_snr_db == row.noise_si_snr_db);

  // Shuffling imperfect estimates also leaves the scores unchanged.
  AudioSignal a = item.speakers[0], b = item.speakers[1];
  Rng rng(11);
  for (auto& x : a.samples) x += 0.2 * rng.uniform(-1.0, 1.0);
  for (auto& x : b.samples) x += 0.2 * rng.uniform(-1.0, 1.0);
  EvalRow fwd = evaluate_item({a, b, item.noise}, item, "x");
  EvalRow rev = evaluate_item({b, a, item.noise}, item, "x");
  CHECK(fwd.si_snri_db == doctest::Approx(rev.si_snri_db).epsilon(1e-12));
  CHECK(fwd.sdri_db == doctest::Approx(rev.sdri_db).epsilon(1e-12));
  CHECK(fwd.noise_si_snr_db == rev.noise_si_snr_db);
  CHECK(fwd.permutation[0] != rev.permutation[0]);

  // Without a noise estimate the row has no noise column.
  EvalRow lean = evaluate_item({item.speakers[0], item.speakers[1]}, item, "x");
  CHECK_FALSE(lean.has_noise);

  CHECK_THROWS_AS(evaluate_item({item.speakers[0]}, item, "x"), ContractError);
  AudioSignal shorty = item.speakers[0];
  shorty.samples.resize(100);
  CHECK_THROWS_AS(evaluate_item({shorty, item.speakers[1], item.noise}, item, "x"),
                  ShapeError);
}

TEST_CASE("model evaluation produces one deterministic row per item") {
  SeparatorModel model(tiny_model_config(), 3);
  std::vector<MixtureItem> items{make_item(0.25, 1), make_item(0.25, 9),
                                 make_item(0.25, 17)};

  EvalReport report = evaluate_items(model, items);
  REQUIRE(report.rows.size() == 3);
  CHECK(report.has_noise);
  for (size_t i = 0; i < report.rows.size(); ++i) {
    CHECK(report.rows[i].item_id == "item" + std::to_string(i));
    CHECK(std::isfinite(report.rows[i].si_snri_db));
    CHECK(std::isfinite(report.rows[i].sdri_db));
    CHECK(report.rows[i].has_noise);
  }

  // Aggregates are the unweighted means of the rows.
  double si = 0.0, sd = 0.0, nz = 0.0;
  for (const EvalRow& r : report.rows) {
    si += r.si_snri_db;
    sd += r.sdri_db;
    nz += r.noise_si_snr_db;
  }
  CHECK(report.mean_si_snri_db == doctest::Approx(si / 3.0).epsilon(1e-12));
  CHECK(report.mean_sdri_db == doctest::Approx(sd / 3.0).epsilon(1e-12));
  CHECK(report.mean_noise_si_snr_db == doctest::Approx(nz / 3.0).epsilon(1e-12));

  // Byte-identical rerun.
  EvalReport again = evaluate_items(model, items);
  CHECK(render_eval_csv(report) == render_eval_csv(again));

  // Speaker-count mismatch is rejected up front.
  MixtureItem three = make_item(0.25, 21);
  three.speakers.push_back(synth_source(SourceKind::Chirp, 0.25, 400.0, 99));
  CHECK_THROWS_AS(evaluate_items(model, {three}), ConfigError);
  CHECK_THROWS_AS(evaluate_items(model, {}), ParamError);
}

TEST_CASE("evaluation CSV matches its own aggregate when re-parsed") {
  SeparatorModel model(tiny_model_config(), 13);
  std::vector<MixtureItem> items{make_item(0.25, 2), make_item(0.25, 4)};
  EvalReport report = evaluate_items(model, items, {"a.wav", "b.wav"});

  const std::string dir = temp_dir("csv");
  write_eval_csv(dir + "/report.csv", report);
  const std::string text = read_file(dir + "/report.csv");
  CHECK(text == render_eval_csv(report));

  std::istringstream in(text);
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "item,perm,si_snri_db,sdri_db,noise_si_snr_db");

  // Post-hoc oracle: re-derive the aggregate from the CSV text alone.
  double si = 0.0, sd = 0.0, nz = 0.0;
  int rows = 0;
  while (std::getline(in, line)) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ls(line);
    while (std::getline(ls, field, ',')) fields.push_back(field);
    REQUIRE(fields.size() == 5);
    si += std::stod(fields[2]);
    sd += std::stod(fields[3]);
    nz += std::stod(fields[4]);
    ++rows;
  }
  REQUIRE(rows == 2);
  CHECK(report.mean_si_snri_db == doctest::Approx(si / 2.0).epsilon(1e-8));
  CHECK(report.mean_sdri_db == doctest::Approx(sd / 2.0).epsilon(1e-8));
  CHECK(report.mean_noise_si_snr_db == doctest::Approx(nz / 2.0).epsilon(1e-8));
  CHECK(report.rows[0].item_id == "a.wav");
}

TEST_CASE("spectrogram shape, tone peak, and zero signal") {
  // Pure 1 kHz tone at 8 kHz: every frame peaks at bin 32 of 129.
  AudioSignal tone;
  tone.sample_rate = 8000;
  tone.samples.resize(8000);
  for (size_t i = 0; i < tone.samples.size(); ++i) {
    tone.samples[i] = std::sin(2.0 * 3.14159265358979323846 * 1000.0 *
                               static_cast<double>(i) / 8000.0);
  }
  Spectrogram spec = stft_magnitude(tone);
  CHECK(spec.frames == (8000 - 256) / 64 + 1);
  CHECK(spec.bins == 129);
  for (int64_t f = 0; f < spec.frames; ++f) {
    int64_t arg = 0;
    for (int64_t k = 1; k < spec.bins; ++k) {
      if (spec.at(f, k) > spec.at(f, arg)) arg = k;
    }
    CHECK(arg == 32);
  }

  // All-zero input gives all-zero magnitudes and an all-zero image.
  AudioSignal silent;
  silent.samples.assign(1000, 0.0);
  Spectrogram zero = stft_magnitude(silent);
  CHECK(zero.frames == (1000 - 256) / 64 + 1);
  for (double m : zero.mag) CHECK(m == 0.0);

  const std::string dir = temp_dir("spec");
  write_spectrogram_pgm(dir + "/zero.pgm", zero);
  const std::string img = read_file(dir + "/zero.pgm");
  const std::string header = "P5\n" + std::to_string(zero.frames) + " " +
                             std::to_string(zero.bins) + "\n255\n";
  REQUIRE(img.substr(0, header.size()) == header);
  CHECK(img.size() == header.size() + static_cast<size_t>(zero.frames * zero.bins));
  for (size_t i = header.size(); i < img.size(); ++i) CHECK(img[i] == 0);

  // Short signals and bad windows are parameter errors.
  AudioSignal tiny;
  tiny.samples.assign(100, 0.1);
  CHECK_THROWS_AS(stft_magnitude(tiny), ParamError);
  CHECK_THROWS_AS(stft_magnitude(tone, 255, 64), ParamError);
  CHECK_THROWS_AS(stft_magnitude(tone, 256, 0), ParamError);
}

TEST_CASE("spectrogram export writes matching image and CSV") {
  MixtureItem item = make_item(0.25, 33);
  const std::string dir = temp_dir("export");
  Spectrogram spec = export_spectrogram(item.mixture, dir + "/mix");

  REQUIRE(fs::exists(dir + "/mix.pgm"));
  REQUIRE(fs::exists(dir + "/mix.csv"));

  // CSV has one row per frame, bins columns, and parses back to the values.
  std::istringstream in(read_file(dir + "/mix.csv"));
  std::string line;
  int64_t rows = 0;
  while (std::getline(in, line)) {
    std::vector<double> vals;
    std::string field;
    std::istringstream ls(line);
    while (std::getline(ls, field, ',')) vals.push_back(std::stod(field));
    REQUIRE(static_cast<int64_t>(vals.size()) == spec.bins);
    for (int64_t k = 0; k < spec.bins; ++k) {
      CHECK(vals[static_cast<size_t>(k)] ==
            doctest::Approx(spec.at(rows, k)).epsilon(1e-9));
    }
    ++rows;
  }
  CHECK(rows == spec.frames);

  // The PGM uses the full dynamic range: some pixel at 255.
  const std::string img = read_file(dir + "/mix.pgm");
  bool has_max = false;
  for (size_t i = img.size() - static_cast<size_t>(spec.frames * spec.bins);
       i < img.size(); ++i) {
    if (static_cast<unsigned char>(img[i]) == 255) has_max = true;
  }
  CHECK(has_max);

  // Exports are byte-identical across reruns.
  export_spectrogram(item.mixture, dir + "/mix2");
  CHECK(read_file(dir + "/mix2.pgm") == img);
}
