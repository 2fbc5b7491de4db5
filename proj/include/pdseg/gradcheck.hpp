#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pdseg/tensor.hpp"

namespace pdseg {

struct GradCheckOptions {
  // Initial h of the 4th-order stencil. An estimate is accepted once the
  // stencils at h, h/2 and h/4 agree within tolerance/10; otherwise h shrinks 10×
  // down to `min_step`, so ReLU/max kinks near the probe point are stepped past.
  double step = 1e-3;
  double min_step = 1e-8;
  double tolerance = 1e-4;
  /// Share of probes allowed to stay unresolved before the check fails.
  double max_unresolved = 0.05;
  // Denominator floor: gradients below this are compared in absolute terms,
  // since the difference quotient carries ~eps·|f|/h of roundoff.
  double abs_floor = 1e-6;
  /// Coordinates probed per input; <= 0 probes every coordinate.
  std::int64_t max_coords = 0;
  /// With max_coords > 0: also probe this many largest-|g| coordinates.
  std::int64_t largest_coords = 0;
  /// Extra random-direction probes per input (directional derivative vs g·v).
  int directions = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  /// Worst relative error per input, max(|g_ad − g_fd| / max(|g_ad|, |g_fd|, abs_floor)).
  std::vector<double> max_rel_error;
  /// Probes where no step gave consistent differences (a kink at the point
  /// itself). They are excluded from max_rel_error.
  std::vector<int> unresolved;
  int probes = 0;
  double tolerance = 0;
  bool passed = false;

  double worst() const;
  std::string summary() const;
};

using ScalarFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

/// Compares reverse-mode gradients of `fn` against fourth-order central differences.
/// Inputs must be leaves created with requires_grad=true; their gradient buffers
/// are zeroed. Throws OracleError when fn is not deterministic.
GradCheckReport grad_check(const ScalarFn& fn, std::vector<Tensor<double>> inputs,
                           const GradCheckOptions& options = {});

}  // namespace pdseg
