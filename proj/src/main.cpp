// Copyright 2026 The noisesep authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line surface: dataset synthesis, training, separation, evaluation,
// gradient checking, spectrogram export, and parameter counting.
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "noisesep/checkpoint.hpp"
#include "noisesep/errors.hpp"
#include "noisesep/gradcheck.hpp"
#include "noisesep/metrics.hpp"
#include "noisesep/objective.hpp"
#include "noisesep/signals.hpp"
#include "noisesep/trainer.hpp"

namespace fs = std::filesystem;
using namespace noisesep;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitIo = 2;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir + "': " + ec.message());
}

FileConfig load_file_config(const std::string& config_path, bool seed_given,
                            uint64_t seed) {
  FileConfig fc;
  if (!config_path.empty()) {
    fc = parse_train_config(config_path);
  } else {
    fc.train.pcl.embed_dim = fc.model.embed_dim;
  }
  if (seed_given) fc.train.seed = seed;
  return fc;
}

int run_mix(const DatasetConfig& dc, const std::string& out_dir) {
  ensure_dir(out_dir);
  DatasetManifest manifest = make_dataset(dc, out_dir);
  std::cout << "manifest=" << (fs::path(out_dir) / "manifest.tsv").string() << "\n";
  std::cout << "items=" << manifest.items.size() << "\n";
  std::cout << "speakers=" << manifest.num_speakers << "\n";
  std::cout << "sample_rate=" << manifest.sample_rate << "\n";
  return kExitOk;
}

int run_train(FileConfig fc, const std::string& manifest_path,
              const std::string& val_manifest_path, const std::string& out_dir,
              const std::string& resume_path) {
  if (!out_dir.empty()) fc.train.checkpoint_dir = out_dir;
  ensure_dir(fc.train.checkpoint_dir);

  DatasetManifest train_man = read_manifest(manifest_path);
  DatasetManifest val_man =
      val_manifest_path.empty() ? train_man : read_manifest(val_manifest_path);
  if (train_man.num_speakers != fc.model.num_speakers) {
    throw ConfigError("train: manifest has " + std::to_string(train_man.num_speakers) +
                      " speakers, model is configured for " +
                      std::to_string(fc.model.num_speakers));
  }
  std::vector<MixtureItem> train_items, val_items;
  for (size_t i = 0; i < train_man.items.size(); ++i) {
    train_items.push_back(load_item(train_man, i));
  }
  for (size_t i = 0; i < val_man.items.size(); ++i) {
    val_items.push_back(load_item(val_man, i));
  }

  SeparatorModel model(fc.model, fc.train.seed);
  TrainResult res = train(model, train_items, val_items, fc.train, nullptr, resume_path);

  std::cout << "steps=" << res.steps_run << "\n";
  std::cout << "epochs=" << res.state.epoch << "\n";
  std::cout << "final_val=" << fmt(res.final_val) << "\n";
  std::cout << "best_val=" << fmt(res.state.best_val) << "\n";
  std::cout << "lr=" << fmt(res.state.lr) << "\n";
  std::cout << "log=" << res.log_path << "\n";
  std::cout << "last_checkpoint=" << res.last_path << "\n";
  if (!res.best_path.empty()) std::cout << "best_checkpoint=" << res.best_path << "\n";
  return kExitOk;
}

int run_separate(const std::string& checkpoint_path, const std::string& input_path,
                 const std::string& out_dir) {
  ensure_dir(out_dir);
  SeparatorModel model = model_from_checkpoint(read_checkpoint(checkpoint_path));
  AudioSignal mixture = read_wav(input_path);
  SeparationResult sep = model.separate(mixture);

  const int c = model.config().num_speakers;
  for (int s = 0; s < static_cast<int>(sep.sources.size()); ++s) {
    const std::string name =
        s < c ? "speaker" + std::to_string(s + 1) + ".wav" : "noise.wav";
    const std::string path = (fs::path(out_dir) / name).string();
    write_wav(path, sep.sources[static_cast<size_t>(s)], WavFormat::Float32);
    std::cout << "wrote=" << path << "\n";
  }
  return kExitOk;
}

int run_evaluate(const std::string& checkpoint_path, const std::string& manifest_path,
                 const std::string& out_dir) {
  ensure_dir(out_dir);
  SeparatorModel model = model_from_checkpoint(read_checkpoint(checkpoint_path));
  DatasetManifest manifest = read_manifest(manifest_path);
  EvalReport report = evaluate(model, manifest);

  const std::string csv_path = (fs::path(out_dir) / "report.csv").string();
  write_eval_csv(csv_path, report);
  std::cout << "report=" << csv_path << "\n";
  std::cout << "items=" << report.rows.size() << "\n";
  std::cout << "mean_si_snri_db=" << fmt(report.mean_si_snri_db) << "\n";
  std::cout << "mean_sdri_db=" << fmt(report.mean_sdri_db) << "\n";
  if (report.has_noise) {
    std::cout << "mean_noise_si_snr_db=" << fmt(report.mean_noise_si_snr_db) << "\n";
  }
  return kExitOk;
}

int run_gradcheck(uint64_t seed) {
  double worst = 0.0;
  bool all_pass = true;
  auto show = [&](const GradCheckReport& r) {
    worst = std::max(worst, r.max_rel_err);
    all_pass = all_pass && r.pass;
    std::cout << (r.pass ? "PASS " : "FAIL ") << r.name
              << " max_rel_err=" << fmt(r.max_rel_err)
              << " coords=" << r.coords_checked;
    if (!r.pass) {
      std::cout << " worst=" << r.worst_location;
      if (!r.failure.empty()) std::cout << " (" << r.failure << ")";
    }
    std::cout << "\n";
  };
  for (const auto& r : primitive_gradcheck_suite(seed, 2)) show(r);
  for (const auto& r : model_gradcheck_suite(seed)) show(r);
  std::cout << (all_pass ? "PASS" : "FAIL") << " max_rel_err=" << fmt(worst) << "\n";
  return all_pass ? kExitOk : kExitValidation;
}

int run_spectrogram(const std::string& input_path, const std::string& out_dir,
                    int64_t frame, int64_t hop) {
  ensure_dir(out_dir);
  AudioSignal signal = read_wav(input_path);
  const std::string base =
      (fs::path(out_dir) / fs::path(input_path).stem().string()).string();
  Spectrogram spec = export_spectrogram(signal, base, frame, hop);
  std::cout << "image=" << base << ".pgm\n";
  std::cout << "csv=" << base << ".csv\n";
  std::cout << "frames=" << spec.frames << "\n";
  std::cout << "bins=" << spec.bins << "\n";
  return kExitOk;
}

int run_params(const FileConfig& fc) {
  SeparatorConfig with = fc.model;
  with.noise_speaker = true;
  SeparatorConfig without = fc.model;
  without.noise_speaker = false;

  SeparatorModel model(fc.model, fc.train.seed);
  SeparatorModel on(with, fc.train.seed);
  SeparatorModel off(without, fc.train.seed);
  const int64_t delta = on.num_parameters() - off.num_parameters();

  std::cout << "params=" << model.num_parameters() << "\n";
  std::cout << "params_noise_on=" << on.num_parameters() << "\n";
  std::cout << "params_noise_off=" << off.num_parameters() << "\n";
  std::cout << "noise_delta=" << delta << "\n";
  std::cout << "noise_delta_percent="
            << fmt(100.0 * static_cast<double>(delta) /
                   static_cast<double>(off.num_parameters()))
            << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Noise-aware speech separation: synthesize mixtures, train a "
               "mask-based separator with an extra noise output and a "
               "contrastive speech/noise objective, separate WAVs, and score "
               "the results."};
  app.require_subcommand(1);
  app.fallthrough();  // allow --config/--seed after the subcommand name
  app.failure_message(CLI::FailureMessage::help);

  std::string config_path;
  uint64_t seed = 0;
  bool seed_given = false;
  app.add_option("--config", config_path,
                 "key=value configuration file (training, model, contrastive)")
      ->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "random seed override")
      ->each([&](const std::string&) { seed_given = true; });

  // mix
  auto* mix = app.add_subcommand("mix", "synthesize a mixture dataset + manifest");
  DatasetConfig dc;
  std::string mix_out;
  mix->add_option("--out", mix_out, "output directory")->required();
  mix->add_option("--items", dc.num_items, "number of mixtures");
  mix->add_option("--speakers", dc.num_speakers, "speakers per mixture (2 or 3)");
  mix->add_option("--duration", dc.duration_s, "seconds per mixture");
  mix->add_option("--snr-min", dc.snr_min_db, "lowest mixing SNR in dB");
  mix->add_option("--snr-max", dc.snr_max_db, "highest mixing SNR in dB");
  mix->add_option("--rate", dc.sample_rate, "sample rate in Hz");
  mix->add_option("--split", dc.split, "split label stored in the manifest");

  // train
  auto* tr = app.add_subcommand("train", "train a separator from a manifest");
  std::string tr_manifest, tr_val_manifest, tr_out, tr_resume;
  tr->add_option("--manifest", tr_manifest, "training manifest")->required();
  tr->add_option("--val-manifest", tr_val_manifest,
                 "validation manifest (defaults to the training manifest)");
  tr->add_option("--out", tr_out, "checkpoint/log directory (overrides config)");
  tr->add_option("--resume", tr_resume, "checkpoint to resume from");

  // separate
  auto* sep = app.add_subcommand("separate", "separate a mixture WAV into sources");
  std::string sep_ckpt, sep_in, sep_out;
  sep->add_option("--checkpoint", sep_ckpt, "model checkpoint")->required();
  sep->add_option("--input", sep_in, "mixture WAV")->required();
  sep->add_option("--out", sep_out, "output directory")->required();

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "score a checkpoint on a manifest");
  std::string ev_ckpt, ev_manifest, ev_out;
  ev->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required();
  ev->add_option("--manifest", ev_manifest, "evaluation manifest")->required();
  ev->add_option("--out", ev_out, "output directory for report.csv")->required();

  // gradcheck
  auto* gc = app.add_subcommand(
      "gradcheck", "finite-difference gradient checks on a tiny model");

  // spectrogram
  auto* sg = app.add_subcommand("spectrogram", "export magnitude spectrogram");
  std::string sg_in, sg_out;
  int64_t sg_frame = 256, sg_hop = 64;
  sg->add_option("--input", sg_in, "input WAV")->required();
  sg->add_option("--out", sg_out, "output directory")->required();
  sg->add_option("--frame", sg_frame, "analysis frame length");
  sg->add_option("--hop", sg_hop, "hop between frames");

  // params
  auto* pc = app.add_subcommand(
      "params", "report parameter counts with and without the noise output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << std::endl;
    return kExitValidation;
  }

  try {
    if (*mix) {
      if (seed_given) dc.seed = seed;
      return run_mix(dc, mix_out);
    }
    if (*tr) {
      return run_train(load_file_config(config_path, seed_given, seed), tr_manifest,
                       tr_val_manifest, tr_out, tr_resume);
    }
    if (*sep) return run_separate(sep_ckpt, sep_in, sep_out);
    if (*ev) return run_evaluate(ev_ckpt, ev_manifest, ev_out);
    if (*gc) return run_gradcheck(seed);
    if (*sg) return run_spectrogram(sg_in, sg_out, sg_frame, sg_hop);
    if (*pc) return run_params(load_file_config(config_path, seed_given, seed));
    std::cerr << app.help() << std::endl;
    return kExitValidation;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kExitIo;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kExitValidation;
  }
}
