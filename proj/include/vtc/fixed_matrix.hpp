// Copyright (C) 2026 The vtcompress Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "vtc/autodiff.hpp"
#include "vtc/compression.hpp"

namespace vtc {

/// Raised when an optimizer produces a non-finite loss or gradient.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(std::size_t step, const std::string& what)
        : std::runtime_error("diverged at step " + std::to_string(step) + ": " + what),
          m_step(step) {}
    std::size_t step() const { return m_step; }

private:
    std::size_t m_step;
};

struct FixedMatrixConfig {
    double alpha = 1.0;
    double sigma_raw = 0.1;
    double lr = 10.0;
    std::size_t epochs = 500;

    void validate() const;
};

/// What the per-image optimizer needs from the frozen decoder: the reference
/// trace of the uncompressed run and a differentiable map from compressed
/// image tokens to the compressed trace.
struct TraceObjective {
    Tensor reference;
    std::function<Var(Tape& tape, Var compressed_tokens)> compressed_trace;
};

struct FixedMatrixStep {
    double l_pred = 0.0;
    double l_entropy = 0.0;
    double total = 0.0;
};

struct FixedMatrixResult {
    CompressionMatrix P;
    Tensor raw;
    /// One entry per epoch, measured before that epoch's update.
    std::vector<FixedMatrixStep> history;
    /// Loss of the returned matrix.
    FixedMatrixStep final;
};

/// Gradient descent on softmax-parameterized P_raw (m x n) minimizing
/// L_pred + alpha * L_entropy. `initial_raw` replaces the Gaussian start.
/// Throws DivergenceError with the step index on a non-finite loss.
FixedMatrixResult train_fixed_matrix(const Tensor& image_tokens,
                                     const TraceObjective& objective,
                                     const FixedMatrixConfig& cfg,
                                     std::size_t m,
                                     std::uint64_t seed,
                                     const std::optional<Tensor>& initial_raw = std::nullopt);

struct OverlapReport {
    std::size_t m = 0;
    std::size_t n = 0;
    std::vector<std::size_t> retained;  // deduplicated argmax sources, ascending
    std::vector<std::size_t> top_scored;  // top-m by score, ascending
    double overlap_fraction = 0.0;  // |retained ∩ top_scored| / |retained|
    double rank_correlation = 0.0;  // Spearman(column mass, scores)
    double chance = 0.0;  // m / n
};

OverlapReport retained_token_analysis(const CompressionMatrix& P, std::span<const double> scores);
nlohmann::json overlap_to_json(const OverlapReport& report);

/// Top-k indices by score, ties to the lower index, returned ascending.
std::vector<std::size_t> top_k_indices(std::span<const double> scores, std::size_t k);

/// Spearman rank correlation with average ranks for ties; 0 when either
/// input is constant.
double spearman(std::span<const double> a, std::span<const double> b);

}  // namespace vtc
