// Copyright (C) 2026 The vtcompress Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vtc/autodiff.hpp"
#include "vtc/tensor.hpp"

namespace vtc {

/// Raised when a matrix violates the row-stochastic contract.
class CompressionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline constexpr double kRowSumTolerance = 1e-9;
inline constexpr double kLogFloor = 1e-12;

/// Throws CompressionError unless P is m x n with m <= n, entries >= 0 and
/// every row summing to 1 within `tol`.
void validate_compression(const Tensor& P, double tol = kRowSumTolerance);

/// An m x n nonnegative row-stochastic matrix. Selection (pruning), mixing
/// (merging) and window-uniform rows (pooling) are all instances.
class CompressionMatrix {
public:
    explicit CompressionMatrix(Tensor P);

    static CompressionMatrix identity(std::size_t n);
    /// One-hot rows e_{sources[i]}.
    static CompressionMatrix selection(std::span<const std::size_t> sources, std::size_t n);

    const Tensor& matrix() const { return m_P; }
    std::size_t m() const { return m_P.rows(); }
    std::size_t n() const { return m_P.cols(); }
    /// r = 1 - m/n.
    double rate() const;

    /// True when every row is exactly one-hot.
    bool is_selection() const;
    /// Per-row source column holding the largest weight; first index on ties.
    std::vector<std::size_t> argmax_sources() const;
    /// Per-column totals sum_i P[i, j].
    std::vector<double> column_mass() const;

    /// P * X without a tape. Exactly-zero weights are skipped, so selection
    /// rows copy source rows bit for bit.
    Tensor apply(const Tensor& X) const;

private:
    Tensor m_P;
};

/// m = max(1, round((1 - rate) * n)).
std::size_t compressed_length(std::size_t n, double rate);

/// Differentiable P * X.
Var apply_compression(Var P, Var X);

/// Mean over positions of KL(orig_t || comp_t). `orig` is a frozen T x V
/// reference; the gradient reaches `comp` only.
Var loss_pred(const Tensor& orig, Var comp, double eps = kLogFloor);

/// Mean Shannon entropy (natural log) of the rows of P.
Var loss_entropy(Var P, double eps = kLogFloor);

/// Largest column sum of P; the subgradient goes to the lowest-index argmax.
Var loss_collapse(Var P);

// Reference (tape-free) forms used by evaluation and reports.
double kl_divergence(const Tensor& orig, const Tensor& comp, double eps = kLogFloor);
double row_entropy(const Tensor& P, double eps = kLogFloor);
double max_column_sum(const Tensor& P);

// Binary layout: magic "VTCP", u64 m, u64 n, then the matrix in tensor format.
void write_compression_matrix(std::ostream& out, const CompressionMatrix& P);
CompressionMatrix read_compression_matrix(std::istream& in);

}  // namespace vtc
