// Copyright 2026 The noisesep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <vector>

#include "noisesep/autodiff.hpp"
#include "noisesep/contrastive.hpp"
#include "noisesep/rng.hpp"
#include "noisesep/separator.hpp"
#include "noisesep/signals.hpp"

namespace noisesep {

// dB value caps for the scale-invariant SNR: a zero projection reports the
// lower cap, a zero residual (perfect reconstruction up to scale) the upper.
constexpr double kSiSnrCapDb = 60.0;
// Per-source floor applied to the negative SI-SNR training loss.
constexpr double kLossClampDb = -30.0;

// Scale-invariant SNR in dB between an estimate and a reference of equal
// length. The reference must not be identically zero.
double si_snr(const std::vector<double>& est, const std::vector<double>& ref);
double si_snr(const AudioSignal& est, const AudioSignal& ref);

// Differentiable SI-SNR of a graph-valued estimate against a fixed reference.
// Not capped: degenerate signals surface as numeric errors instead.
Var si_snr_var(Graph& g, Var est, const std::vector<double>& ref);

struct UpitResult {
  double loss = 0.0;                       // mean clamped per-source loss
  std::vector<int> permutation;            // pred speaker i aligns with refs[permutation[i]]
  std::vector<double> per_source_si_snr;   // dB, prediction order (speakers, then noise)
};

// Brute-force utterance-level permutation-invariant loss. ests/refs hold the
// speaker signals first; when both have num_speakers+1 entries the last pair
// is the noise source, which is matched fixed (never permuted). Per-source
// loss is max(-si_snr, clamp_db).
UpitResult upit_si_snr_loss(const std::vector<std::vector<double>>& ests,
                            const std::vector<std::vector<double>>& refs, int num_speakers,
                            double clamp_db = kLossClampDb);

struct LossReport {
  double total = 0.0;
  double si_snr_term = 0.0;
  double pcl_term = 0.0;  // unweighted contrastive term
  std::vector<int> permutation;
  std::vector<int> pcl_permutation;  // assignment the contrastive term used; empty when it did not run
  std::vector<double> per_source_si_snr;
  Var loss;  // graph node carrying `total`, ready for backward()
};

// Precomputed encoded ground-truth stems. The contrastive term treats these
// as constants (no gradient to the encoder through the truth branch); passing
// them explicitly freezes the detached branch, which finite-difference checks
// need because they would otherwise see it move.
struct TruthReprs {
  std::vector<Tensor> speakers;  // truth order
  Tensor noise;
};

// Full training objective for one mixture: clamped uPIT SI-SNR loss plus
// lambda times the contrastive term, which reuses the uPIT permutation to
// align predicted speakers with ground-truth stems. When frozen_truth is
// null, the stems are re-encoded with the current encoder weights.
LossReport total_loss(Graph& g, SeparatorModel& model, const MixtureItem& item,
                      const PclConfig& pcl, Rng& rng, double clamp_db = kLossClampDb,
                      const TruthReprs* frozen_truth = nullptr);

}  // namespace noisesep
