// Copyright 2026 The noisesep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "noisesep/autodiff.hpp"

namespace noisesep {

struct GradCheckReport {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = false;
  int64_t coords_checked = 0;
  std::string worst_location;  // coordinate with the largest relative error
  std::string failure;         // set when f was non-finite at a perturbed point
};

// Builds a scalar loss from the current values of the registered Parameters.
// Called repeatedly on fresh graphs while coordinates are perturbed.
using LossFn = std::function<Var(Graph&)>;

// Central differences (f(p+d) - f(p-d)) / (2d) per coordinate against the
// analytic gradient; rel err = |a - n| / max(1e-8, |a| + |n|). A coordinate
// that fails at `step` is re-probed at step/10, step/100, and step*10 and
// keeps its best error: the smaller steps clear an activation kink inside
// the stencil, the larger one clears cancellation noise on near-zero
// gradients, and a wrong gradient still fails at every scale.
GradCheckReport grad_check(const std::string& name, const LossFn& f,
                           const std::vector<Parameter*>& params, double step = 1e-3,
                           double tolerance = 1e-4);

// One grad_check per differentiable primitive on `instances` random instances
// each (kink-bearing inputs are sampled away from their kinks). Reports carry
// the worst instance per primitive.
std::vector<GradCheckReport> primitive_gradcheck_suite(uint64_t seed, int instances,
                                                       double step = 1e-3,
                                                       double tolerance = 1e-4);

// End-to-end checks on a tiny separation model (8 filters, chunk 4, 1 block,
// 8-wide patch embedding, 4 negatives, 160-sample input): the masking network
// with both path flavors, the scale-invariant objective, the contrastive
// term, and the combined training loss, all against central differences over
// every parameter coordinate.
std::vector<GradCheckReport> model_gradcheck_suite(uint64_t seed);

}  // namespace noisesep
