// Copyright (C) 2026 The vtcompress Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtc/fixed_matrix.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vtc/rng.hpp"

namespace vtc {

void FixedMatrixConfig::validate() const {
    if (!(alpha > 0.0) || !(sigma_raw > 0.0) || !(lr > 0.0) || epochs == 0) {
        throw std::invalid_argument("fixed-matrix config: alpha, sigma_raw, lr and epochs must be positive");
    }
}

namespace {

struct Evaluated {
    FixedMatrixStep loss;
    Tensor grad;
};

Evaluated evaluate(const Tensor& raw, const Tensor& tokens, const TraceObjective& objective, double alpha,
                   bool want_grad) {
    Tape tape;
    Var r = tape.leaf(raw, want_grad);
    Var P = row_softmax(r);
    Var X = tape.constant(tokens);
    Var comp = objective.compressed_trace(tape, apply_compression(P, X));
    Var lp = loss_pred(objective.reference, comp);
    Var le = loss_entropy(P);
    Var total = add(lp, scale(le, alpha));
    Evaluated out;
    out.loss = {lp.value().item(), le.value().item(), total.value().item()};
    if (want_grad) {
        tape.backward(total);
        out.grad = tape.grad(r);
    }
    return out;
}

}  // namespace

FixedMatrixResult train_fixed_matrix(const Tensor& image_tokens,
                                     const TraceObjective& objective,
                                     const FixedMatrixConfig& cfg,
                                     std::size_t m,
                                     std::uint64_t seed,
                                     const std::optional<Tensor>& initial_raw) {
    cfg.validate();
    const std::size_t n = image_tokens.rows();
    if (m == 0 || m > n) {
        throw std::invalid_argument("train_fixed_matrix: need 1 <= m <= n, got m=" + std::to_string(m) +
                                    " n=" + std::to_string(n));
    }
    Tensor raw;
    if (initial_raw) {
        if (initial_raw->rank() != 2 || initial_raw->rows() != m || initial_raw->cols() != n) {
            throw std::invalid_argument("train_fixed_matrix: initial raw matrix has shape " +
                                        shape_string(initial_raw->shape()));
        }
        raw = *initial_raw;
    } else {
        Rng rng(seed);
        raw = rng.normal_matrix(m, n, cfg.sigma_raw);
    }

    std::vector<FixedMatrixStep> history;
    history.reserve(cfg.epochs);
    for (std::size_t step = 0; step < cfg.epochs; ++step) {
        Evaluated e;
        try {
            e = evaluate(raw, image_tokens, objective, cfg.alpha, true);
        } catch (const NumericalError& err) {
            throw DivergenceError(step, err.what());
        }
        if (!std::isfinite(e.loss.total) || !e.grad.all_finite()) {
            throw DivergenceError(step, "non-finite loss or gradient");
        }
        history.push_back(e.loss);
        for (std::size_t i = 0; i < raw.size(); ++i) {
            raw[i] -= cfg.lr * e.grad[i];
        }
    }

    Evaluated last;
    try {
        last = evaluate(raw, image_tokens, objective, cfg.alpha, false);
    } catch (const NumericalError& err) {
        throw DivergenceError(cfg.epochs, err.what());
    }
    Tape tape;
    Tensor P = row_softmax(tape.constant(raw)).value();
    return FixedMatrixResult{CompressionMatrix(std::move(P)), std::move(raw), std::move(history), last.loss};
}

std::vector<std::size_t> top_k_indices(std::span<const double> scores, std::size_t k) {
    if (k > scores.size()) {
        throw std::invalid_argument("top_k_indices: k=" + std::to_string(k) + " exceeds " +
                                    std::to_string(scores.size()));
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    order.resize(k);
    std::sort(order.begin(), order.end());
    return order;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) {
            ++j;
        }
        const double r = 0.5 * static_cast<double>(i + j);
        for (std::size_t k = i; k <= j; ++k) {
            ranks[order[k]] = r;
        }
        i = j + 1;
    }
    return ranks;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw std::invalid_argument("spearman: length mismatch");
    }
    if (a.size() < 2) {
        return 0.0;
    }
    const auto ra = average_ranks(a);
    const auto rb = average_ranks(b);
    const double mean = 0.5 * static_cast<double>(a.size() - 1);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (ra[i] - mean) * (rb[i] - mean);
        saa += (ra[i] - mean) * (ra[i] - mean);
        sbb += (rb[i] - mean) * (rb[i] - mean);
    }
    if (saa == 0.0 || sbb == 0.0) {
        return 0.0;
    }
    return sab / std::sqrt(saa * sbb);
}

OverlapReport retained_token_analysis(const CompressionMatrix& P, std::span<const double> scores) {
    if (scores.size() != P.n()) {
        throw std::invalid_argument("retained_token_analysis: " + std::to_string(scores.size()) +
                                    " scores for n=" + std::to_string(P.n()));
    }
    OverlapReport r;
    r.m = P.m();
    r.n = P.n();
    r.retained = P.argmax_sources();
    std::sort(r.retained.begin(), r.retained.end());
    r.retained.erase(std::unique(r.retained.begin(), r.retained.end()), r.retained.end());
    r.top_scored = top_k_indices(scores, r.m);
    std::vector<std::size_t> both;
    std::set_intersection(r.retained.begin(), r.retained.end(), r.top_scored.begin(), r.top_scored.end(),
                          std::back_inserter(both));
    r.overlap_fraction = static_cast<double>(both.size()) / static_cast<double>(r.retained.size());
    const auto mass = P.column_mass();
    r.rank_correlation = spearman(mass, scores);
    r.chance = static_cast<double>(r.m) / static_cast<double>(r.n);
    return r;
}

nlohmann::json overlap_to_json(const OverlapReport& report) {
    return {{"m", report.m},
            {"n", report.n},
            {"retained", report.retained},
            {"top_scored", report.top_scored},
            {"overlap_fraction", report.overlap_fraction},
            {"rank_correlation", report.rank_correlation},
            {"chance", report.chance}};
}

}  // namespace vtc
