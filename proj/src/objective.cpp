// Copyright 2026 The noisesep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "noisesep/objective.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "noisesep/errors.hpp"

namespace noisesep {
namespace {

void check_lengths(const std::vector<double>& est, const std::vector<double>& ref,
                   const char* op) {
  if (est.empty() || est.size() != ref.size()) {
    throw ShapeError(std::string(op) + ": estimate and reference lengths differ (" +
                     std::to_string(est.size()) + " vs " + std::to_string(ref.size()) + ")");
  }
}

}  // namespace

double si_snr(const std::vector<double>& est, const std::vector<double>& ref) {
  check_lengths(est, ref, "si_snr");
  double ref_pow = 0.0;
  double dot = 0.0;
  for (size_t i = 0; i < ref.size(); ++i) {
    ref_pow += ref[i] * ref[i];
    dot += est[i] * ref[i];
  }
  if (ref_pow == 0.0) throw DegenerateInputError("si_snr: reference is identically zero");
  const double alpha = dot / ref_pow;
  const double target_pow = alpha * alpha * ref_pow;
  if (target_pow == 0.0) return -kSiSnrCapDb;  // estimate orthogonal to (or zero on) the target
  double resid_pow = 0.0;
  for (size_t i = 0; i < ref.size(); ++i) {
    const double r = est[i] - alpha * ref[i];
    resid_pow += r * r;
  }
  if (resid_pow == 0.0) return kSiSnrCapDb;  // perfect reconstruction up to scale
  const double value = 10.0 * std::log10(target_pow / resid_pow);
  return std::clamp(value, -kSiSnrCapDb, kSiSnrCapDb);
}

double si_snr(const AudioSignal& est, const AudioSignal& ref) {
  return si_snr(est.samples, ref.samples);
}

Var si_snr_var(Graph& g, Var est, const std::vector<double>& ref) {
  const auto& sh = g.value(est).shape();
  if (sh.size() != 1 || sh[0] != static_cast<int64_t>(ref.size())) {
    throw ShapeError("si_snr_var: estimate shape " + Tensor::shape_str(sh) +
                     " does not match reference length " + std::to_string(ref.size()));
  }
  double ref_pow = 0.0;
  for (double v : ref) ref_pow += v * v;
  if (ref_pow == 0.0) throw DegenerateInputError("si_snr_var: reference is identically zero");
  Var refc = g.constant(Tensor({static_cast<int64_t>(ref.size())}, ref));
  Var dot = g.reduce_sum(g.mul(est, refc));
  Var target = g.scale_by(refc, g.scale(dot, 1.0 / ref_pow));
  Var resid = g.sub(est, target);
  Var target_pow = g.reduce_sum(g.mul(target, target));
  Var resid_pow = g.reduce_sum(g.mul(resid, resid));
  return g.scale(g.sub(g.log(target_pow), g.log(resid_pow)), 10.0 / std::log(10.0));
}

UpitResult upit_si_snr_loss(const std::vector<std::vector<double>>& ests,
                            const std::vector<std::vector<double>>& refs, int num_speakers,
                            double clamp_db) {
  if (num_speakers < 2 || num_speakers > 3) {
    throw ContractError("upit: num_speakers must be 2 or 3, got " + std::to_string(num_speakers));
  }
  const size_t c = static_cast<size_t>(num_speakers);
  if (ests.size() != refs.size() || (ests.size() != c && ests.size() != c + 1)) {
    throw ContractError("upit: expected " + std::to_string(c) + " or " + std::to_string(c + 1) +
                        " estimate/reference pairs, got " + std::to_string(ests.size()) +
                        " estimates and " + std::to_string(refs.size()) + " references");
  }
  const bool has_noise = ests.size() == c + 1;

  // Pairwise speaker SI-SNR table; the noise pair is fixed and shared by all
  // assignments.
  std::vector<std::vector<double>> si(c, std::vector<double>(c));
  for (size_t i = 0; i < c; ++i) {
    for (size_t j = 0; j < c; ++j) si[i][j] = si_snr(ests[i], refs[j]);
  }
  const double noise_si = has_noise ? si_snr(ests[c], refs[c]) : 0.0;
  const double noise_loss = has_noise ? std::max(-noise_si, clamp_db) : 0.0;
  const double denom = static_cast<double>(ests.size());

  UpitResult best;
  best.loss = std::numeric_limits<double>::infinity();
  std::vector<int> perm(c);
  std::iota(perm.begin(), perm.end(), 0);
  do {
    double sum = has_noise ? noise_loss : 0.0;
    for (size_t i = 0; i < c; ++i) {
      sum += std::max(-si[i][static_cast<size_t>(perm[i])], clamp_db);
    }
    const double loss = sum / denom;
    if (loss < best.loss) {
      best.loss = loss;
      best.permutation = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));

  for (size_t i = 0; i < c; ++i) {
    best.per_source_si_snr.push_back(si[i][static_cast<size_t>(best.permutation[i])]);
  }
  if (has_noise) best.per_source_si_snr.push_back(noise_si);
  return best;
}

LossReport total_loss(Graph& g, SeparatorModel& model, const MixtureItem& item,
                      const PclConfig& pcl, Rng& rng, double clamp_db,
                      const TruthReprs* frozen_truth) {
  const SeparatorConfig& mc = model.config();
  if (static_cast<int>(item.speakers.size()) != mc.num_speakers) {
    throw ContractError("total_loss: item has " + std::to_string(item.speakers.size()) +
                        " speakers, model expects " + std::to_string(mc.num_speakers));
  }
  ForwardResult f = model.forward(g, item.mixture.samples);

  std::vector<std::vector<double>> ests;
  ests.reserve(f.outputs.size());
  for (Var o : f.outputs) ests.push_back(g.value(o).vec());
  std::vector<std::vector<double>> refs;
  refs.reserve(f.outputs.size());
  for (const auto& s : item.speakers) refs.push_back(s.samples);
  if (mc.noise_speaker) refs.push_back(item.noise.samples);

  UpitResult upit = upit_si_snr_loss(ests, refs, mc.num_speakers, clamp_db);

  // Rebuild the chosen assignment differentiably.
  Var sum;
  for (size_t i = 0; i < refs.size(); ++i) {
    const size_t j = i < static_cast<size_t>(mc.num_speakers)
                         ? static_cast<size_t>(upit.permutation[i])
                         : i;  // noise stays on its own slot
    Var term = g.clamp_min(g.scale(si_snr_var(g, f.outputs[i], refs[j]), -1.0), clamp_db);
    sum = sum.valid() ? g.add(sum, term) : term;
  }
  Var si_term = g.scale(sum, 1.0 / static_cast<double>(refs.size()));

  LossReport report;
  report.permutation = upit.permutation;
  report.per_source_si_snr = upit.per_source_si_snr;
  report.si_snr_term = g.value(si_term).item();
  if (pcl.lambda_weight > 0.0) {
    std::vector<Tensor> truth_reprs;
    Tensor truth_noise;
    if (frozen_truth != nullptr) {
      truth_reprs = frozen_truth->speakers;
      truth_noise = frozen_truth->noise;
    } else {
      truth_reprs.reserve(item.speakers.size());
      for (const auto& s : item.speakers) truth_reprs.push_back(model.encode_repr(s.samples));
      truth_noise = model.encode_repr(item.noise.samples);
    }
    PclResult pr =
        pcl_total(g, model, f.masked, truth_reprs, truth_noise, pcl, rng, upit.permutation);
    report.pcl_term = g.value(pr.value).item();
    report.pcl_permutation = pr.permutation;
    report.loss = g.add(si_term, g.scale(pr.value, pcl.lambda_weight));
  } else {
    report.pcl_term = 0.0;
    report.loss = si_term;
  }
  report.total = g.value(report.loss).item();
  return report;
}

}  // namespace noisesep
