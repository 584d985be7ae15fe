#pragma once

#include "sasr/tape.hpp"

#include <functional>
#include <span>
#include <string>

namespace sasr {

struct GradCheckParam {
  std::string name;
  Tensor tensor;
};

struct GradCheckReport {
  Scalar max_rel_error = 0.0;
  std::string worst_param;
  Index worst_coord = -1;
  Scalar ad = 0.0;
  Scalar fd = 0.0;
  int samples = 0;
  int compared = 0;
};

/// Compares the reverse-mode gradient of the scalar function f against
/// central finite differences at `step`, on `samples` coordinates drawn
/// uniformly (seeded) over all parameter entries. f must read the given
/// parameter tensors by handle so in-place perturbations take effect, and
/// must be deterministic. Relative error per coordinate is
/// |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).
///
/// Central differences resolve a gradient only down to roughly
/// (rounding noise of f) / (2·step); a coordinate whose true gradient sits
/// below that is pure noise to the oracle. min_ad skips coordinates with
/// |g_ad| < min_ad and keeps drawing until `samples` comparisons are made
/// (or the candidate pool is exhausted); the default 0 compares every draw.
/// Skipped coordinates must be covered by a better-conditioned check.
GradCheckReport grad_check(const std::function<Tensor(Tape&)>& f,
                           std::span<const GradCheckParam> params,
                           Scalar step, int samples, uint64_t seed, Scalar min_ad = 0.0);

}  // namespace sasr
