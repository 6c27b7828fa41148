// Copyright 2026 The noisesep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "noisesep/autodiff.hpp"
#include "noisesep/rng.hpp"
#include "noisesep/separator.hpp"

namespace noisesep {

// Direction of the patch-contrastive term: speech queries against noise
// negatives, noise queries against speech negatives, or both summed.
enum class PclDirection { SToN, NToS, Both };

PclDirection parse_pcl_direction(const std::string& s);
std::string pcl_direction_name(PclDirection d);

struct PclConfig {
  int64_t negatives = 256;    // M: comparisons per set and negatives per comparison
  int64_t patch_size = 1;     // P: only single-frame patches are supported
  int64_t embed_dim = 256;    // Q: projection width; must match the model
  double tau = 0.07;          // softmax temperature
  PclDirection direction = PclDirection::Both;
  double lambda_weight = 2.0;  // weight of the contrastive term in the total loss

  void validate() const;
};

// M projected patches per role, all unit rows in the shared Q-dim space.
// Positives are taken at the same frame indices as the queries.
struct PatchSet {
  Var queries;    // [M, Q]
  Var positives;  // [M, Q]
  Var negatives;  // [M, Q]
  std::vector<int64_t> query_frames;
  std::vector<int64_t> negative_frames;
};

// Draws M query/positive frame indices (shared) and M independent negative
// frame indices, then projects the selected representation columns. The three
// representations must share shape N x L.
PatchSet sample_patches(Graph& g, SeparatorModel& model, Var h_pred, Var h_truth, Var h_noise,
                        const PclConfig& cfg, Rng& rng);

// Mean over the M comparisons of the (M+1)-way cross-entropy where the
// positive must beat every negative in the set.
Var pcl_loss(Graph& g, const PatchSet& ps, double tau);

struct PclResult {
  Var value;                    // unweighted contrastive term
  int64_t comparisons = 0;      // total number of query patches drawn
  std::vector<PatchSet> sets;   // one per evaluated comparison set
  std::vector<Var> truth_vars;  // constants entered for ground-truth representations
  std::vector<int> permutation; // speaker assignment the positives were paired under
};

// Full contrastive term for one utterance. pred_reprs: masked representations
// from the separator, speakers first and noise last. truth_speaker_reprs:
// encoded ground-truth stems in truth order; predicted speaker t is aligned
// with truth stem permutation[t]. truth_noise_repr may be empty unless the
// direction includes noise-to-speech.
PclResult pcl_total(Graph& g, SeparatorModel& model, const std::vector<Var>& pred_reprs,
                    const std::vector<Tensor>& truth_speaker_reprs,
                    const Tensor& truth_noise_repr, const PclConfig& cfg, Rng& rng,
                    const std::vector<int>& permutation);

}  // namespace noisesep
