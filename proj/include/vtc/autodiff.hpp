// Copyright (C) 2026 The vtcompress Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "vtc/tensor.hpp"

namespace vtc {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; only valid while the
/// owning tape is alive and has not been cleared.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
};

/// Everything a backward rule sees. `in_grads[k]` is null when input k does
/// not need a gradient.
struct BackwardArgs {
    const Tensor& out_value;
    const Tensor& out_grad;
    std::span<const Tensor* const> in_values;
    std::span<Tensor* const> in_grads;
};

using BackwardFn = std::function<void(const BackwardArgs&)>;

/// Reverse-mode computation tape. Nodes are appended in evaluation order, so
/// the record is topologically sorted by construction and backward walks it
/// once in reverse. Confined to one thread.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value, bool requires_grad = true);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    /// Appends an op result. `name` is used in error messages only.
    Var record(const char* name, Tensor value, std::vector<Var> inputs, BackwardFn backward);

    const Tensor& value(Var v) const;
    /// Gradient accumulated by the last backward(); zeros if the node was not
    /// reached.
    const Tensor& grad(Var v) const;
    bool requires_grad(Var v) const;

    /// Seeds d(loss)/d(loss) = 1 and propagates to every leaf that requires a
    /// gradient. A tape supports one backward pass; clear() to reuse it.
    void backward(Var loss);

    std::size_t size() const { return m_nodes.size(); }
    void clear();

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        bool needs_grad = false;
    };

    const Node& node(Var v) const;

    std::vector<Node> m_nodes;
    bool m_consumed = false;
};

// Every op below checks shapes (std::invalid_argument) and the finiteness of
// its output (NumericalError).

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
/// Multiplies every row of `a` (m x k) elementwise by the row vector `v` (1 x k).
Var mul_rowvec(Var a, Var v);

Var sum(Var a);
Var mean(Var a);
Var row_sum(Var a);  // m x n -> m x 1
Var col_sum(Var a);  // m x n -> 1 x n

enum class Axis { Rows, Cols };
/// Maximum along an axis. Axis::Rows reduces over rows (m x n -> 1 x n),
/// Axis::Cols over columns (m x n -> m x 1). The subgradient goes to the first
/// maximal entry.
Var max_over(Var a, Axis axis);

/// max(a, 0) elementwise; the subgradient at 0 is 0.
Var relu(Var a);

/// Natural log of (a + floor). Requires a + floor > 0.
Var log(Var a, double floor = 0.0);

Var concat_rows(std::span<const Var> parts);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var concat_cols(std::span<const Var> parts);
/// Embedding-row lookup: out[i] = table[indices[i]].
Var gather_rows(Var table, std::span<const std::size_t> indices);

/// Row-wise softmax with per-row max subtraction.
Var row_softmax(Var x);

/// Window geometry shared by fractional_avg_pool and the spatial-pool
/// baseline: window i starts at round(i*n/m), clamped to [0, n - k], and spans
/// k = min(kernel, n) rows.
std::vector<std::size_t> pool_window_starts(std::size_t n, std::size_t m, std::size_t kernel);
std::size_t effective_kernel(std::size_t n, std::size_t kernel);

/// Average pooling over the token axis with real-valued stride n/m.
Var fractional_avg_pool(Var x, std::size_t m, std::size_t kernel);

}  // namespace vtc
