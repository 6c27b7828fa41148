// Copyright 2026 The noisesep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Python surface: dataset synthesis, training, separation, metrics, and the
// gradient-check suites.  Signals cross the boundary as plain lists of
// doubles; file-based artifacts (WAVs, manifests, checkpoints) stay on disk.
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <string>
#include <vector>

#include "noisesep/checkpoint.hpp"
#include "noisesep/errors.hpp"
#include "noisesep/gradcheck.hpp"
#include "noisesep/metrics.hpp"
#include "noisesep/objective.hpp"
#include "noisesep/signals.hpp"
#include "noisesep/trainer.hpp"

namespace py = pybind11;
using namespace noisesep;

namespace {

AudioSignal to_signal(const std::vector<double>& samples, int sample_rate) {
  AudioSignal s;
  s.samples = samples;
  s.sample_rate = sample_rate;
  return s;
}

py::dict eval_report_dict(const EvalReport& report) {
  py::dict d;
  d["mean_si_snri_db"] = report.mean_si_snri_db;
  d["mean_sdri_db"] = report.mean_sdri_db;
  if (report.has_noise) d["mean_noise_si_snr_db"] = report.mean_noise_si_snr_db;
  py::list rows;
  for (const EvalRow& r : report.rows) {
    py::dict row;
    row["item"] = r.item_id;
    row["permutation"] = r.permutation;
    row["si_snri_db"] = r.si_snri_db;
    row["sdri_db"] = r.sdri_db;
    if (r.has_noise) row["noise_si_snr_db"] = r.noise_si_snr_db;
    rows.append(row);
  }
  d["rows"] = rows;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() =
      "Noise-aware mask-based speech separation: an extra predicted noise "
      "source plus a patch-wise contrastive speech/noise objective.";

  // Translators run newest-first, so the subclass goes second.
  auto base = py::register_exception<Error>(m, "NoisesepError");
  py::register_exception<IoError>(m, "IoError", base);

  // --- signals -------------------------------------------------------------
  m.def(
      "make_dataset",
      [](const std::string& out_dir, int num_items, int num_speakers,
         double duration_s, double snr_min_db, double snr_max_db, int sample_rate,
         const std::string& split, uint64_t seed) {
        DatasetConfig dc;
        dc.num_items = num_items;
        dc.num_speakers = num_speakers;
        dc.duration_s = duration_s;
        dc.snr_min_db = snr_min_db;
        dc.snr_max_db = snr_max_db;
        dc.sample_rate = sample_rate;
        dc.split = split;
        dc.seed = seed;
        make_dataset(dc, out_dir);
        return out_dir + "/manifest.tsv";
      },
      py::arg("out_dir"), py::arg("num_items") = 8, py::arg("num_speakers") = 2,
      py::arg("duration_s") = 1.0, py::arg("snr_min_db") = -6.0,
      py::arg("snr_max_db") = 3.0, py::arg("sample_rate") = 8000,
      py::arg("split") = "train", py::arg("seed") = 0,
      "Synthesize a mixture dataset and return the manifest path.");

  m.def(
      "read_wav",
      [](const std::string& path) {
        AudioSignal s = read_wav(path);
        return py::make_tuple(s.samples, s.sample_rate);
      },
      py::arg("path"), "Read a WAV file; returns (samples, sample_rate).");

  m.def(
      "write_wav",
      [](const std::string& path, const std::vector<double>& samples,
         int sample_rate, bool float32) {
        write_wav(path, to_signal(samples, sample_rate),
                  float32 ? WavFormat::Float32 : WavFormat::Pcm16);
      },
      py::arg("path"), py::arg("samples"), py::arg("sample_rate") = 8000,
      py::arg("float32") = true);

  // --- metrics and objectives ----------------------------------------------
  m.def(
      "si_snr",
      [](const std::vector<double>& est, const std::vector<double>& ref) {
        return si_snr(est, ref);
      },
      py::arg("est"), py::arg("ref"),
      "Scale-invariant SNR in dB, clamped to [-60, 60].");
  m.def(
      "sdr",
      [](const std::vector<double>& est, const std::vector<double>& ref) {
        return sdr(est, ref);
      },
      py::arg("est"), py::arg("ref"), "Plain SDR in dB, clamped to [-60, 60].");
  m.def(
      "si_snri",
      [](const std::vector<double>& est, const std::vector<double>& ref,
         const std::vector<double>& mix) { return si_snri(est, ref, mix); },
      py::arg("est"), py::arg("ref"), py::arg("mix"),
      "SI-SNR improvement of est over the unprocessed mixture, in dB.");

  m.def(
      "upit_si_snr",
      [](const std::vector<std::vector<double>>& ests,
         const std::vector<std::vector<double>>& refs, int num_speakers) {
        UpitResult r = upit_si_snr_loss(ests, refs, num_speakers);
        return py::make_tuple(r.permutation, r.loss);
      },
      py::arg("ests"), py::arg("refs"), py::arg("num_speakers"),
      "Best speaker assignment and the clamped negative-SI-SNR loss under it; "
      "a trailing noise source, when present, keeps its slot.");

  // --- gradient checks -------------------------------------------------------
  m.def(
      "gradcheck",
      [](uint64_t seed) {
        py::list out;
        std::vector<GradCheckReport> reports = primitive_gradcheck_suite(seed, 2);
        std::vector<GradCheckReport> model = model_gradcheck_suite(seed);
        reports.insert(reports.end(), model.begin(), model.end());
        for (const GradCheckReport& r : reports) {
          out.append(py::make_tuple(r.name, r.max_rel_err, r.pass));
        }
        return out;
      },
      py::arg("seed") = 0,
      "Finite-difference checks over every primitive and a tiny end-to-end "
      "model; returns (name, max_rel_err, passed) per check.");

  // --- model ---------------------------------------------------------------
  py::class_<SeparatorModel>(m, "Separator",
                             "Mask-based separator with an extra noise output.")
      .def(py::init([](int num_speakers, bool noise_output, uint64_t seed) {
             SeparatorConfig cfg;
             cfg.num_speakers = num_speakers;
             cfg.noise_speaker = noise_output;
             return SeparatorModel(cfg, seed);
           }),
           py::arg("num_speakers") = 2, py::arg("noise_output") = true,
           py::arg("seed") = 0,
           "Fresh desk-scale model (64 filters, 2 dual-path blocks).")
      .def_static(
          "load",
          [](const std::string& checkpoint_path) {
            return model_from_checkpoint(read_checkpoint(checkpoint_path));
          },
          py::arg("checkpoint_path"), "Rebuild a model from a checkpoint file.")
      .def_property_readonly("num_parameters",
                             [](SeparatorModel& mdl) { return mdl.num_parameters(); })
      .def_property_readonly(
          "num_speakers",
          [](const SeparatorModel& mdl) { return mdl.config().num_speakers; })
      .def_property_readonly(
          "num_sources",
          [](const SeparatorModel& mdl) { return mdl.config().num_sources(); })
      .def(
          "separate",
          [](SeparatorModel& mdl, const std::vector<double>& samples,
             int sample_rate) {
            SeparationResult r = mdl.separate(to_signal(samples, sample_rate));
            std::vector<std::vector<double>> out;
            for (AudioSignal& s : r.sources) out.push_back(std::move(s.samples));
            return out;
          },
          py::arg("samples"), py::arg("sample_rate") = 8000,
          "Split a mixture into per-speaker signals plus, last, the noise "
          "estimate.");

  // --- training and evaluation ----------------------------------------------
  m.def(
      "train",
      [](const std::string& manifest_path, const std::string& out_dir,
         const std::string& config_text, uint64_t seed,
         const std::string& resume) {
        FileConfig fc = parse_train_config_text(config_text);
        fc.train.checkpoint_dir = out_dir;
        fc.train.seed = seed;
        DatasetManifest manifest = read_manifest(manifest_path);
        if (manifest.num_speakers != fc.model.num_speakers) {
          throw ConfigError("train: manifest speaker count does not match the model");
        }
        std::vector<MixtureItem> items;
        for (size_t i = 0; i < manifest.items.size(); ++i) {
          items.push_back(load_item(manifest, i));
        }
        SeparatorModel model(fc.model, fc.train.seed);
        TrainResult res = train(model, items, items, fc.train, nullptr, resume);
        py::dict d;
        d["steps"] = res.steps_run;
        d["final_val"] = res.final_val;
        d["log"] = res.log_path;
        d["last_checkpoint"] = res.last_path;
        d["best_checkpoint"] = res.best_path;
        return d;
      },
      py::arg("manifest_path"), py::arg("out_dir"), py::arg("config_text") = "",
      py::arg("seed") = 0, py::arg("resume") = "",
      "Train on a manifest; config_text uses the same key=value lines as the "
      "command-line --config file.  Returns paths to the log and checkpoints.");

  m.def(
      "evaluate",
      [](const std::string& checkpoint_path, const std::string& manifest_path) {
        SeparatorModel model = model_from_checkpoint(read_checkpoint(checkpoint_path));
        DatasetManifest manifest = read_manifest(manifest_path);
        return eval_report_dict(evaluate(model, manifest));
      },
      py::arg("checkpoint_path"), py::arg("manifest_path"),
      "Score a checkpoint on a manifest; returns means and per-item rows.");
}
