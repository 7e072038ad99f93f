// Copyright (C) 2026 The vtcompress Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "vtc/autodiff.hpp"

namespace vtc {

struct GradCheckResult {
    double max_rel_error = 0.0;
    // Location and values of the worst coordinate, for diagnostics.
    std::size_t worst_param = 0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t coordinates = 0;
};

/// Builds a scalar loss on `tape` from leaves holding the parameters.
using TapeFn = std::function<Var(Tape& tape, std::span<const Var> params)>;

using ValueFn = std::function<double(const std::vector<Tensor>& params)>;
using GradFn = std::function<std::vector<Tensor>(const std::vector<Tensor>& params)>;

/// Compares `grad` against central differences of `value` coordinate by
/// coordinate: |a - fd| / max(|a|, |fd|, floor). Throws NumericalError if
/// `value` is non-finite anywhere it is probed.
GradCheckResult finite_diff_check(const ValueFn& value,
                                  const GradFn& grad,
                                  const std::vector<Tensor>& params,
                                  double eps = 1e-5,
                                  double floor = 1e-6);

/// Same check with the analytic gradient taken from a tape backward pass.
GradCheckResult finite_diff_check(const TapeFn& f,
                                  const std::vector<Tensor>& params,
                                  double eps = 1e-5,
                                  double floor = 1e-6);

}  // namespace vtc
