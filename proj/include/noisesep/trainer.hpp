// Copyright 2026 The noisesep authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "noisesep/contrastive.hpp"
#include "noisesep/objective.hpp"
#include "noisesep/separator.hpp"
#include "noisesep/signals.hpp"
#include "noisesep/tensor.hpp"

namespace noisesep {

// Adam constants (bias-corrected first/second moments).
inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

struct TrainConfig {
  int64_t epochs = 60;
  double lr0 = 1.5e-4;
  // First epoch index at which a validation plateau may halve the rate.
  int64_t halving_start_epoch = 20;
  // Consecutive epochs without strict validation improvement before halving.
  int64_t patience = 3;
  double clip_norm = 5.0;       // global L2 gradient-norm ceiling
  double segment_s = 4.0;       // training segment length drawn per step
  int64_t batch_size = 1;
  uint64_t seed = 0;
  double clamp_db = kLossClampDb;  // per-source loss floor, in -dB
  // Reserved knob for speed-based augmentation; not implemented, must be off.
  bool speed_perturb = false;
  PclConfig pcl;
  std::string checkpoint_dir = ".";

  void validate() const;  // ConfigError on out-of-range values
};

struct TrainState {
  int64_t step = 0;    // global step counter (monotonic across epochs)
  int64_t epoch = 0;   // epochs completed
  int64_t adam_t = 0;  // optimizer updates applied (for bias correction)
  double lr = 0.0;
  double best_val = std::numeric_limits<double>::infinity();
  int64_t best_epoch = -1;
  int64_t plateau = 0;  // consecutive non-improving validation epochs
  std::vector<Tensor> m, v;  // Adam moments, one per model parameter
};

// Sizes the moment accumulators for the given parameter list (all zeros).
void adam_init(TrainState& state, const std::vector<Parameter*>& params);

// One Adam update using state.lr. Throws NumericError naming the parameter
// when any gradient entry is non-finite; the step is then not applied.
void optimizer_step(TrainState& state, const std::vector<Parameter*>& params);

// Scales all gradients by max_norm/norm when the global L2 norm exceeds
// max_norm (a norm exactly equal to max_norm is left untouched).
// Returns the pre-clip norm.
double clip_gradients(const std::vector<Parameter*>& params, double max_norm);

// Epoch-end bookkeeping: tracks the best validation loss, counts plateau
// epochs once epoch >= halving_start_epoch, and halves the rate after
// `patience` consecutive non-improving epochs (consecutive plateaus compound).
// Returns true when the loss strictly improved.
bool lr_schedule_update(TrainState& state, double val_loss, const TrainConfig& cfg);

// Everything an external observer needs to audit one training step. Reported
// before the optimizer update, so the model still holds the parameters the
// losses were computed with.
struct StepRecord {
  int64_t step = 0;
  int64_t epoch = 0;
  double lr = 0.0;
  double total = 0.0;
  double si_snr_term = 0.0;
  double pcl_term = 0.0;
  double grad_norm = 0.0;  // pre-clip global L2 norm
  std::vector<int> permutation;      // assignment chosen by the separation objective
  std::vector<int> pcl_permutation;  // assignment the contrastive term used
  size_t item_index = 0;             // training item the (last) segment came from
  int64_t segment_start = 0;
  int64_t segment_len = 0;
};
using StepObserver = std::function<void(const StepRecord&)>;

struct TrainResult {
  TrainState state;
  std::string log_path;
  std::string best_path;  // empty when no validation pass ran
  std::string last_path;
  double final_val = std::numeric_limits<double>::quiet_NaN();
  int64_t steps_run = 0;
};

// Full training loop: per step, draw a segment_s-long segment (the whole item
// when shorter), forward, combined objective with the shared speaker
// assignment, backward, clip, Adam update; per epoch, a validation pass (mean
// total loss over val_items), schedule update, and checkpointing (best.ckpt on
// improvement, last.ckpt every epoch). Writes train_log.csv with the header
// `step,epoch,lr,total,si_snr,pcl`, one line per step. All random draws are
// derived from (cfg.seed, counters), so a run resumed from last.ckpt emits
// exactly the log lines the uninterrupted run would have. A non-finite loss
// or gradient aborts with a NumericError; the last-good checkpoint stays on
// disk.
TrainResult train(SeparatorModel& model, const std::vector<MixtureItem>& train_items,
                  const std::vector<MixtureItem>& val_items, const TrainConfig& cfg,
                  StepObserver observer = nullptr, const std::string& resume_path = "");

// Mean total loss over the items, deterministic in (cfg.seed, epoch).
double validation_loss(SeparatorModel& model, const std::vector<MixtureItem>& items,
                       const TrainConfig& cfg, int64_t epoch);

// The deterministic segment drawn for global sub-step `draw` (exposed so
// tests and audits can reconstruct exactly what a step trained on).
struct SegmentSpan {
  int64_t start = 0;
  int64_t len = 0;
};
SegmentSpan plan_segment(const MixtureItem& item, const TrainConfig& cfg, uint64_t draw);
MixtureItem crop_segment(const MixtureItem& item, const SegmentSpan& span);
MixtureItem draw_segment(const MixtureItem& item, const TrainConfig& cfg, uint64_t draw);

// UTF-8 key=value training-configuration file covering the training, model,
// and contrastive options. Unknown keys or malformed values raise
// ConfigError. The contrastive embedding width always follows the model's
// `embed_dim`; there is no separate key for it.
struct FileConfig {
  TrainConfig train;
  SeparatorConfig model;
};
FileConfig parse_train_config_text(const std::string& text);
FileConfig parse_train_config(const std::string& path);
std::string render_train_config(const FileConfig& fc);

}  // namespace noisesep
