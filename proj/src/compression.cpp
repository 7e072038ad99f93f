// Copyright (C) 2026 The vtcompress Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtc/compression.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

namespace vtc {

void validate_compression(const Tensor& P, double tol) {
    if (P.rank() != 2) {
        throw CompressionError("compression matrix must be rank 2, got " + shape_string(P.shape()));
    }
    const std::size_t m = P.rows(), n = P.cols();
    if (m == 0 || n == 0) {
        throw CompressionError("compression matrix is empty");
    }
    if (m > n) {
        throw CompressionError("compression matrix has m=" + std::to_string(m) + " > n=" + std::to_string(n));
    }
    for (std::size_t i = 0; i < m; ++i) {
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double v = P(i, j);
            if (!std::isfinite(v) || v < 0.0) {
                throw CompressionError("compression matrix entry (" + std::to_string(i) + ", " + std::to_string(j) +
                                       ") = " + std::to_string(v) + " is not a nonnegative finite weight");
            }
            total += v;
        }
        if (std::abs(total - 1.0) > tol) {
            throw CompressionError("compression matrix row " + std::to_string(i) + " sums to " +
                                   std::to_string(total));
        }
    }
}

CompressionMatrix::CompressionMatrix(Tensor P) : m_P(std::move(P)) {
    validate_compression(m_P);
}

CompressionMatrix CompressionMatrix::identity(std::size_t n) {
    return CompressionMatrix(Tensor::identity(n));
}

CompressionMatrix CompressionMatrix::selection(std::span<const std::size_t> sources, std::size_t n) {
    Tensor P = Tensor::matrix(sources.size(), n);
    for (std::size_t i = 0; i < sources.size(); ++i) {
        if (sources[i] >= n) {
            throw CompressionError("selection source " + std::to_string(sources[i]) + " out of range " +
                                   std::to_string(n));
        }
        P(i, sources[i]) = 1.0;
    }
    return CompressionMatrix(std::move(P));
}

double CompressionMatrix::rate() const {
    return 1.0 - static_cast<double>(m()) / static_cast<double>(n());
}

bool CompressionMatrix::is_selection() const {
    for (std::size_t i = 0; i < m(); ++i) {
        std::size_t ones = 0;
        for (double v : m_P.row(i)) {
            if (v == 1.0) {
                ++ones;
            } else if (v != 0.0) {
                return false;
            }
        }
        if (ones != 1) {
            return false;
        }
    }
    return true;
}

std::vector<std::size_t> CompressionMatrix::argmax_sources() const {
    std::vector<std::size_t> out(m());
    for (std::size_t i = 0; i < m(); ++i) {
        const auto row = m_P.row(i);
        out[i] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    return out;
}

std::vector<double> CompressionMatrix::column_mass() const {
    std::vector<double> mass(n(), 0.0);
    for (std::size_t i = 0; i < m(); ++i) {
        for (std::size_t j = 0; j < n(); ++j) {
            mass[j] += m_P(i, j);
        }
    }
    return mass;
}

Tensor CompressionMatrix::apply(const Tensor& X) const {
    if (X.rank() != 2 || X.rows() != n()) {
        throw std::invalid_argument("CompressionMatrix::apply: expected " + std::to_string(n()) +
                                    " token rows, got " + shape_string(X.shape()));
    }
    const std::size_t d = X.cols();
    Tensor out = Tensor::matrix(m(), d);
    for (std::size_t i = 0; i < m(); ++i) {
        auto o = out.row(i);
        bool first = true;
        for (std::size_t j = 0; j < n(); ++j) {
            const double w = m_P(i, j);
            if (w == 0.0) {
                continue;
            }
            const auto x = X.row(j);
            if (first && w == 1.0) {
                std::copy(x.begin(), x.end(), o.begin());
            } else {
                for (std::size_t k = 0; k < d; ++k) {
                    o[k] += w * x[k];
                }
            }
            first = false;
        }
    }
    return out;
}

std::size_t compressed_length(std::size_t n, double rate) {
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw std::invalid_argument("reduction rate must lie in [0, 1), got " + std::to_string(rate));
    }
    if (n == 0) {
        throw std::invalid_argument("compressed_length: empty token sequence");
    }
    const auto m = static_cast<std::size_t>(std::llround((1.0 - rate) * static_cast<double>(n)));
    return std::max<std::size_t>(1, m);
}

Var apply_compression(Var P, Var X) {
    if (P.cols() != X.rows()) {
        throw std::invalid_argument("apply_compression: P has " + std::to_string(P.cols()) + " columns but X has " +
                                    std::to_string(X.rows()) + " rows");
    }
    return matmul(P, X);
}

Var loss_pred(const Tensor& orig, Var comp, double eps) {
    const Tensor& q = comp.value();
    if (!orig.same_shape(q)) {
        throw std::invalid_argument("loss_pred: trace shapes differ " + shape_string(orig.shape()) + " vs " +
                                    shape_string(q.shape()));
    }
    const double T = static_cast<double>(orig.rows());
    // KL = (1/T) sum p log(p + eps) - (1/T) sum p log(q + eps); the first part is constant.
    double self = 0.0;
    for (double p : orig.data()) {
        if (p > 0.0) {
            self += p * std::log(p + eps);
        }
    }
    Tape& tape = *comp.tape;
    Var p = tape.constant(orig);
    Var cross = sum(mul(p, log(comp, eps)));
    return add_scalar(scale(cross, -1.0 / T), self / T);
}

Var loss_entropy(Var P, double eps) {
    const double m = static_cast<double>(P.rows());
    return scale(sum(mul(P, log(P, eps))), -1.0 / m);
}

Var loss_collapse(Var P) {
    return max_over(col_sum(P), Axis::Cols);
}

double kl_divergence(const Tensor& orig, const Tensor& comp, double eps) {
    if (!orig.same_shape(comp)) {
        throw std::invalid_argument("kl_divergence: trace shapes differ");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < orig.size(); ++i) {
        const double p = orig[i];
        if (p > 0.0) {
            total += p * (std::log(p + eps) - std::log(comp[i] + eps));
        }
    }
    return total / static_cast<double>(orig.rows());
}

double row_entropy(const Tensor& P, double eps) {
    double total = 0.0;
    for (double p : P.data()) {
        if (p > 0.0) {
            total -= p * std::log(p + eps);
        }
    }
    return total / static_cast<double>(P.rows());
}

double max_column_sum(const Tensor& P) {
    std::vector<double> mass(P.cols(), 0.0);
    for (std::size_t i = 0; i < P.rows(); ++i) {
        for (std::size_t j = 0; j < P.cols(); ++j) {
            mass[j] += P(i, j);
        }
    }
    return *std::max_element(mass.begin(), mass.end());
}

void write_compression_matrix(std::ostream& out, const CompressionMatrix& P) {
    io::write_magic(out, "VTCP");
    io::write_u64(out, P.m());
    io::write_u64(out, P.n());
    write_tensor(out, P.matrix());
}

CompressionMatrix read_compression_matrix(std::istream& in) {
    io::expect_magic(in, "VTCP");
    const std::uint64_t m = io::read_u64(in);
    const std::uint64_t n = io::read_u64(in);
    Tensor P = read_tensor(in);
    if (P.rank() != 2 || P.rows() != m || P.cols() != n) {
        throw std::runtime_error("compression matrix header (" + std::to_string(m) + ", " + std::to_string(n) +
                                 ") disagrees with payload " + shape_string(P.shape()));
    }
    return CompressionMatrix(std::move(P));
}

}  // namespace vtc
