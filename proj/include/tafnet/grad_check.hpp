#pragma once

#include <functional>
#include <span>
#include <string>

#include "tafnet/autograd.hpp"
#include "tafnet/rng.hpp"

namespace tafnet {

struct GradCheckOptions {
  double eps = 1e-5;
  // 0 checks every coordinate; otherwise this many are sampled per parameter.
  int coords_per_param = 0;
  uint64_t sample_seed = 0;
  // When sampling, prefer coordinates whose analytic gradient magnitude is
  // at least this value; a coordinate whose true gradient sits below the
  // central-difference resolution (~1e-9 at eps 1e-5) measures only noise.
  // Falls back to the largest-magnitude coordinates when too few qualify.
  double min_grad_mag = 0.0;
  // Step-halving validation: also difference at eps/2 and drop coordinates
  // where the two estimates disagree by more than 25%. A disagreement
  // means the step straddled a relu/maxpool kink, so the difference
  // quotient measures nothing. Used for the deep composite checks.
  bool validate_step = false;
};

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Compares analytic gradients from one tape replay against central finite
// differences of f. f must be deterministic and must read parameter values
// at call time; it is invoked with a tape once and tape-free for each probe.
// Relative error per coordinate:
//   |analytic - numeric| / max(1e-8, |analytic| + |numeric|)
// A non-finite loss at a probe point raises NumericError naming the
// parameter being probed.
GradCheckResult grad_check(const std::function<Var(Tape*)>& f,
                           std::span<Parameter* const> params,
                           const GradCheckOptions& opts = {});

}  // namespace tafnet
