// Copyright 2026 The noisesep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "noisesep/contrastive.hpp"

#include <algorithm>
#include <string>
#include <vector>

#include "noisesep/errors.hpp"

namespace noisesep {
namespace {

void check_repr(Graph& g, Var h, int64_t n, const char* role) {
  const auto& sh = g.value(h).shape();
  if (sh.size() != 2 || sh[0] != n) {
    throw ShapeError(std::string("sample_patches: ") + role + " representation must be [" +
                     std::to_string(n) + ", L], got " + Tensor::shape_str(sh));
  }
}

// Core sampler. Queries and positives share frame indices so they must share
// L; the negative source only has to share the channel count (its length may
// differ, e.g. when negatives are drawn across several concatenated stems).
PatchSet sample_patches_impl(Graph& g, SeparatorModel& model, Var h_pred, Var h_truth, Var h_neg,
                             const PclConfig& cfg, Rng& rng) {
  cfg.validate();
  const int64_t n = model.config().filters;
  if (cfg.embed_dim != model.config().embed_dim) {
    throw ConfigError("sample_patches: config embed_dim " + std::to_string(cfg.embed_dim) +
                      " does not match the model's " + std::to_string(model.config().embed_dim));
  }
  check_repr(g, h_pred, n, "predicted");
  check_repr(g, h_truth, n, "ground-truth");
  check_repr(g, h_neg, n, "negative");
  const int64_t l = g.value(h_pred).dim(1);
  if (g.value(h_truth).dim(1) != l) {
    throw ShapeError("sample_patches: predicted and ground-truth lengths differ: " +
                     std::to_string(l) + " vs " + std::to_string(g.value(h_truth).dim(1)));
  }
  const int64_t l_neg = g.value(h_neg).dim(1);
  PatchSet out;
  out.query_frames.reserve(static_cast<size_t>(cfg.negatives));
  out.negative_frames.reserve(static_cast<size_t>(cfg.negatives));
  for (int64_t i = 0; i < cfg.negatives; ++i) out.query_frames.push_back(rng.below(l));
  for (int64_t i = 0; i < cfg.negatives; ++i) out.negative_frames.push_back(rng.below(l_neg));
  Var q_rows = g.gather_rows(g.transpose(h_pred, 0, 1), out.query_frames);
  Var p_rows = g.gather_rows(g.transpose(h_truth, 0, 1), out.query_frames);
  Var n_rows = g.gather_rows(g.transpose(h_neg, 0, 1), out.negative_frames);
  out.queries = model.project_patches(g, q_rows);
  out.positives = model.project_patches(g, p_rows);
  out.negatives = model.project_patches(g, n_rows);
  return out;
}

}  // namespace

PclDirection parse_pcl_direction(const std::string& s) {
  if (s == "s_to_n") return PclDirection::SToN;
  if (s == "n_to_s") return PclDirection::NToS;
  if (s == "both") return PclDirection::Both;
  throw ConfigError("contrastive direction must be 's_to_n', 'n_to_s' or 'both', got '" + s +
                    "'");
}

std::string pcl_direction_name(PclDirection d) {
  switch (d) {
    case PclDirection::SToN: return "s_to_n";
    case PclDirection::NToS: return "n_to_s";
    default: return "both";
  }
}

void PclConfig::validate() const {
  if (negatives < 1) throw ConfigError("contrastive: negatives must be >= 1");
  if (patch_size != 1) throw ConfigError("contrastive: only patch_size 1 is supported");
  if (embed_dim < 1) throw ConfigError("contrastive: embed_dim must be >= 1");
  if (!(tau > 0.0)) throw ConfigError("contrastive: tau must be positive");
  if (lambda_weight < 0.0) throw ConfigError("contrastive: lambda_weight must be >= 0");
}

PatchSet sample_patches(Graph& g, SeparatorModel& model, Var h_pred, Var h_truth, Var h_noise,
                        const PclConfig& cfg, Rng& rng) {
  // The public contract requires all three representations to share N x L.
  const auto& a = g.value(h_pred).shape();
  const auto& b = g.value(h_noise).shape();
  if (a != b) {
    throw ShapeError("sample_patches: representations must share shape, got " +
                     Tensor::shape_str(a) + " vs " + Tensor::shape_str(b));
  }
  return sample_patches_impl(g, model, h_pred, h_truth, h_noise, cfg, rng);
}

Var pcl_loss(Graph& g, const PatchSet& ps, double tau) {
  if (!(tau > 0.0)) throw ParamError("pcl_loss: tau must be positive");
  if (!ps.queries.valid() || !ps.positives.valid() || !ps.negatives.valid()) {
    throw ContractError("pcl_loss: patch set is incomplete");
  }
  const int64_t m = g.value(ps.queries).dim(0);
  Var sim_pos = g.sum_last(g.mul(ps.queries, ps.positives));               // [M]
  Var sim_neg = g.matmul(ps.queries, g.transpose(ps.negatives, 0, 1));     // [M, M]
  Var logits = g.concat({g.reshape(sim_pos, {m, 1}), sim_neg}, 1);         // positive first
  Var lsm = g.log_softmax_last(g.scale(logits, 1.0 / tau));
  return g.scale(g.reduce_mean(g.slice(lsm, 1, 0, 1)), -1.0);
}

PclResult pcl_total(Graph& g, SeparatorModel& model, const std::vector<Var>& pred_reprs,
                    const std::vector<Tensor>& truth_speaker_reprs,
                    const Tensor& truth_noise_repr, const PclConfig& cfg, Rng& rng,
                    const std::vector<int>& permutation) {
  cfg.validate();
  const auto& mc = model.config();
  const int c = mc.num_speakers;
  if (!mc.noise_speaker || static_cast<int64_t>(pred_reprs.size()) != mc.num_sources()) {
    throw ConfigError(
        "pcl_total: the contrastive loss needs the predicted noise representation "
        "(noise_speaker enabled, " +
        std::to_string(mc.num_sources()) + " sources), got " +
        std::to_string(pred_reprs.size()) + " representations");
  }
  if (static_cast<int>(truth_speaker_reprs.size()) != c) {
    throw ContractError("pcl_total: expected " + std::to_string(c) +
                        " ground-truth speaker representations, got " +
                        std::to_string(truth_speaker_reprs.size()));
  }
  if (static_cast<int>(permutation.size()) != c) {
    throw ContractError("pcl_total: permutation size " + std::to_string(permutation.size()) +
                        " does not match " + std::to_string(c) + " speakers");
  }
  std::vector<int> sorted = permutation;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < c; ++i) {
    if (sorted[static_cast<size_t>(i)] != i) {
      throw ContractError("pcl_total: permutation is not a bijection on the speakers");
    }
  }

  PclResult res;
  res.permutation = permutation;
  Var noise_pred = pred_reprs[static_cast<size_t>(c)];
  Var s2n, n2s;
  if (cfg.direction == PclDirection::SToN || cfg.direction == PclDirection::Both) {
    Var sum;
    for (int t = 0; t < c; ++t) {
      Var truth = g.constant(truth_speaker_reprs[static_cast<size_t>(permutation[t])]);
      res.truth_vars.push_back(truth);
      PatchSet ps = sample_patches_impl(g, model, pred_reprs[static_cast<size_t>(t)], truth,
                                        noise_pred, cfg, rng);
      Var term = pcl_loss(g, ps, cfg.tau);
      sum = sum.valid() ? g.add(sum, term) : term;
      res.sets.push_back(std::move(ps));
      res.comparisons += cfg.negatives;
    }
    s2n = g.scale(sum, 1.0 / c);  // averaged over the human speakers
  }
  if (cfg.direction == PclDirection::NToS || cfg.direction == PclDirection::Both) {
    if (truth_noise_repr.empty()) {
      throw ConfigError("pcl_total: direction " + pcl_direction_name(cfg.direction) +
                        " needs the encoded ground-truth noise representation");
    }
    Var truth_n = g.constant(truth_noise_repr);
    res.truth_vars.push_back(truth_n);
    // Uniform negatives across all truth speakers: concatenating the stems
    // along L makes one frame draw equal one (speaker, frame) draw.
    std::vector<Var> stems;
    stems.reserve(truth_speaker_reprs.size());
    for (const Tensor& t : truth_speaker_reprs) {
      Var v = g.constant(t);
      res.truth_vars.push_back(v);
      stems.push_back(v);
    }
    Var neg_src = stems.size() == 1 ? stems[0] : g.concat(stems, 1);
    PatchSet ps = sample_patches_impl(g, model, noise_pred, truth_n, neg_src, cfg, rng);
    n2s = pcl_loss(g, ps, cfg.tau);
    res.sets.push_back(std::move(ps));
    res.comparisons += cfg.negatives;
  }
  if (s2n.valid() && n2s.valid()) {
    res.value = g.add(s2n, n2s);
  } else {
    res.value = s2n.valid() ? s2n : n2s;
  }
  return res;
}

}  // namespace noisesep
