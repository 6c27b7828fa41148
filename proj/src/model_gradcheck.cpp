// Copyright 2026 The noisesep authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end finite-difference checks on a tiny but complete separation
// model, exercising every trainable parameter of every subsystem.
#include "noisesep/contrastive.hpp"
#include "noisesep/gradcheck.hpp"
#include "noisesep/objective.hpp"
#include "noisesep/rng.hpp"
#include "noisesep/separator.hpp"
#include "noisesep/signals.hpp"

namespace noisesep {
namespace {

SeparatorConfig tiny_config(BlockKind kind) {
  SeparatorConfig cfg;
  cfg.filters = 8;
  cfg.kernel = 16;
  cfg.stride = 8;
  cfg.num_speakers = 2;
  cfg.noise_speaker = true;
  cfg.chunk_size = 4;
  cfg.blocks = 1;
  cfg.block_kind = kind;
  cfg.hidden = 8;
  cfg.embed_dim = 8;
  return cfg;
}

PclConfig tiny_pcl() {
  PclConfig cfg;
  cfg.negatives = 4;
  cfg.embed_dim = 8;
  return cfg;
}

std::vector<double> random_signal(int64_t n, uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(static_cast<size_t>(n));
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

MixtureItem tiny_item(uint64_t seed) {
  std::vector<AudioSignal> speakers{
      synth_source(SourceKind::Harmonic, 0.02, 180.0, seed),
      synth_source(SourceKind::AmTone, 0.02, 290.0, seed + 1)};
  AudioSignal noise = synth_noise(NoiseKind::White, 0.02, seed + 2);
  return mix_at_snr(std::move(speakers), std::move(noise), 0.0);
}

}  // namespace

std::vector<GradCheckReport> model_gradcheck_suite(uint64_t seed) {
  std::vector<GradCheckReport> reports;

  // Masking network end to end, both path flavors: the summed waveform
  // outputs pull gradients through decoder, masks, dual paths, and encoder.
  for (BlockKind kind : {BlockKind::Recurrent, BlockKind::Attention}) {
    SeparatorModel model(tiny_config(kind), Rng::mix(seed, 101));
    const std::vector<double> x = random_signal(160, Rng::mix(seed, 102));
    auto loss = [&](Graph& g) -> Var {
      ForwardResult f = model.forward(g, x);
      Var total = g.reduce_sum(f.outputs[0]);
      for (size_t i = 1; i < f.outputs.size(); ++i) {
        total = g.add(total, g.reduce_sum(f.outputs[i]));
      }
      return total;
    };
    reports.push_back(grad_check("separator." + block_kind_name(kind), loss,
                                 model.parameters(), 1e-5, 1e-4));
  }

  // Scale-invariant objective on a free estimate.
  {
    Rng rng(Rng::mix(seed, 103));
    Tensor est({32});
    std::vector<double> ref(32);
    for (int64_t i = 0; i < 32; ++i) {
      est[i] = rng.uniform(-1.0, 1.0);
      ref[i] = rng.uniform(-1.0, 1.0);
    }
    Parameter p("estimate", est);
    auto loss = [&](Graph& g) -> Var {
      return g.scale(si_snr_var(g, g.param(p), ref), -1.0);
    };
    reports.push_back(grad_check("objective.si_snr", loss, {&p}, 1e-5, 1e-4));
  }

  // Assignment-searched objective alone (contrastive weight zero).
  {
    SeparatorModel model(tiny_config(BlockKind::Recurrent), Rng::mix(seed, 104));
    MixtureItem item = tiny_item(Rng::mix(seed, 105));
    PclConfig pcl = tiny_pcl();
    pcl.lambda_weight = 0.0;
    auto loss = [&](Graph& g) -> Var {
      Rng rng(4242);
      return total_loss(g, model, item, pcl, rng).loss;
    };
    reports.push_back(
        grad_check("objective.upit", loss, model.parameters(), 1e-5, 1e-4));
  }

  // Contrastive term through the whole model, truth branch frozen (the loss
  // treats ground-truth encodings as constants, so the finite differences
  // must hold them fixed too).
  {
    SeparatorModel model(tiny_config(BlockKind::Recurrent), Rng::mix(seed, 106));
    PclConfig pcl = tiny_pcl();
    const std::vector<double> mix = random_signal(160, Rng::mix(seed, 107));
    std::vector<Tensor> truth{
        model.encode_repr(random_signal(160, Rng::mix(seed, 108))),
        model.encode_repr(random_signal(160, Rng::mix(seed, 109)))};
    Tensor truth_noise = model.encode_repr(random_signal(160, Rng::mix(seed, 110)));
    auto loss = [&](Graph& g) -> Var {
      ForwardResult f = model.forward(g, mix);
      Rng rng(31337);
      return pcl_total(g, model, f.masked, truth, truth_noise, pcl, rng, {0, 1}).value;
    };
    reports.push_back(
        grad_check("contrastive.pcl_total", loss, model.parameters(), 1e-5, 1e-4));
  }

  // Combined training loss with frozen truth encodings.
  {
    SeparatorModel model(tiny_config(BlockKind::Recurrent), Rng::mix(seed, 111));
    MixtureItem item = tiny_item(Rng::mix(seed, 112));
    PclConfig pcl = tiny_pcl();
    TruthReprs truth;
    for (const auto& s : item.speakers) {
      truth.speakers.push_back(model.encode_repr(s.samples));
    }
    truth.noise = model.encode_repr(item.noise.samples);
    auto loss = [&](Graph& g) -> Var {
      Rng rng(424242);
      return total_loss(g, model, item, pcl, rng, kLossClampDb, &truth).loss;
    };
    reports.push_back(
        grad_check("objective.total_loss", loss, model.parameters(), 1e-5, 1e-4));
  }

  return reports;
}

}  // namespace noisesep
