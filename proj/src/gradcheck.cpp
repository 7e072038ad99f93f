// Copyright (C) 2026 The vtcompress Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtc/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace vtc {

GradCheckResult finite_diff_check(const ValueFn& value,
                                  const GradFn& grad,
                                  const std::vector<Tensor>& params,
                                  double eps,
                                  double floor) {
    if (!(eps > 0.0) || !(floor > 0.0)) {
        throw std::invalid_argument("finite_diff_check: eps and floor must be positive");
    }
    const std::vector<Tensor> analytic = grad(params);
    if (analytic.size() != params.size()) {
        throw std::invalid_argument("finite_diff_check: gradient count does not match parameter count");
    }
    GradCheckResult result;
    std::vector<Tensor> probe = params;
    for (std::size_t p = 0; p < params.size(); ++p) {
        if (!analytic[p].same_shape(params[p])) {
            throw std::invalid_argument("finite_diff_check: gradient " + std::to_string(p) + " has shape " +
                                        shape_string(analytic[p].shape()) + ", expected " +
                                        shape_string(params[p].shape()));
        }
        for (std::size_t i = 0; i < params[p].size(); ++i) {
            const double x0 = params[p][i];
            probe[p][i] = x0 + eps;
            const double up = value(probe);
            probe[p][i] = x0 - eps;
            const double down = value(probe);
            probe[p][i] = x0;
            if (!std::isfinite(up) || !std::isfinite(down)) {
                throw NumericalError("finite_diff_check: non-finite function value at param " + std::to_string(p) +
                                     " index " + std::to_string(i));
            }
            const double fd = (up - down) / (2.0 * eps);
            const double a = analytic[p][i];
            const double err = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), floor});
            ++result.coordinates;
            if (err > result.max_rel_error || result.coordinates == 1) {
                result.max_rel_error = err;
                result.worst_param = p;
                result.worst_index = i;
                result.analytic = a;
                result.numeric = fd;
            }
        }
    }
    return result;
}

GradCheckResult finite_diff_check(const TapeFn& f, const std::vector<Tensor>& params, double eps, double floor) {
    auto value = [&f](const std::vector<Tensor>& ps) {
        Tape tape;
        std::vector<Var> leaves;
        leaves.reserve(ps.size());
        for (const Tensor& t : ps) {
            leaves.push_back(tape.leaf(t));
        }
        return f(tape, leaves).value().item();
    };
    auto grad = [&f](const std::vector<Tensor>& ps) {
        Tape tape;
        std::vector<Var> leaves;
        leaves.reserve(ps.size());
        for (const Tensor& t : ps) {
            leaves.push_back(tape.leaf(t));
        }
        tape.backward(f(tape, leaves));
        std::vector<Tensor> out;
        out.reserve(leaves.size());
        for (const Var& v : leaves) {
            out.push_back(tape.grad(v));
        }
        return out;
    };
    return finite_diff_check(value, grad, params, eps, floor);
}

}  // namespace vtc
