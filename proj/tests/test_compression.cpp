// Copyright (C) 2026 The vtcompress Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <memory>
#include <sstream>

#include "test_support.hpp"
#include "vtc/autodiff.hpp"
#include "vtc/compression.hpp"
#include "vtc/fixed_matrix.hpp"
#include "vtc/gradcheck.hpp"

namespace vtc {
namespace {

using testing::random_matrix;

Tensor random_stochastic(std::size_t m, std::size_t n, std::uint64_t seed) {
    Tape tape;
    return row_softmax(tape.constant(random_matrix(m, n, seed, 2.0))).value();
}

TEST(CompressionMatrix, ValidatesInvariants) {
    EXPECT_NO_THROW(CompressionMatrix(Tensor::from_rows({{0.5, 0.5, 0}, {0, 0, 1}})));
    EXPECT_THROW(CompressionMatrix(Tensor::from_rows({{0.5, 0.4, 0}})), CompressionError);
    EXPECT_THROW(CompressionMatrix(Tensor::from_rows({{1.5, -0.5}})), CompressionError);
    EXPECT_THROW(CompressionMatrix(Tensor::matrix(3, 2, 0.5)), CompressionError);  // m > n
    EXPECT_THROW(CompressionMatrix(Tensor({4})), CompressionError);
    EXPECT_THROW(CompressionMatrix(Tensor::from_rows({{NAN, 1.0}})), CompressionError);
    EXPECT_NO_THROW(validate_compression(Tensor::from_rows({{0.5, 0.5 + 1e-10}})));
}

TEST(CompressionMatrix, SelectionCopiesRowsExactly) {
    Tensor X = random_matrix(7, 5, 1);
    const std::vector<std::size_t> src{6, 0, 3};
    auto P = CompressionMatrix::selection(src, 7);
    EXPECT_TRUE(P.is_selection());
    EXPECT_EQ(P.argmax_sources(), src);
    Tensor Y = P.apply(X);
    for (std::size_t i = 0; i < src.size(); ++i) {
        for (std::size_t j = 0; j < 5; ++j) {
            EXPECT_EQ(Y(i, j), X(src[i], j));
        }
    }
    EXPECT_THROW(CompressionMatrix::selection(std::vector<std::size_t>{7}, 7), std::invalid_argument);
}

TEST(CompressionMatrix, ApplyMatchesTapeMatmul) {
    auto P = CompressionMatrix(random_stochastic(4, 9, 2));
    Tensor X = random_matrix(9, 3, 3);
    Tape tape;
    Tensor ref = apply_compression(tape.constant(P.matrix()), tape.constant(X)).value();
    EXPECT_LT(max_abs_diff(P.apply(X), ref), 1e-14);
    EXPECT_FALSE(P.is_selection());
    EXPECT_DOUBLE_EQ(P.rate(), 1.0 - 4.0 / 9.0);
}

TEST(CompressionMatrix, ColumnMassAndIdentity) {
    auto P = CompressionMatrix(Tensor::from_rows({{0.25, 0.75, 0}, {0, 0.5, 0.5}}));
    EXPECT_EQ(P.column_mass(), (std::vector<double>{0.25, 1.25, 0.5}));
    EXPECT_EQ(P.argmax_sources(), (std::vector<std::size_t>{1, 1}));
    auto I = CompressionMatrix::identity(4);
    EXPECT_TRUE(I.is_selection());
    EXPECT_EQ(I.rate(), 0.0);
}

TEST(CompressedLength, RoundsAndClamps) {
    EXPECT_EQ(compressed_length(64, 0.75), 16u);
    EXPECT_EQ(compressed_length(576, 0.9), 58u);  // 57.6 rounds up
    EXPECT_EQ(compressed_length(10, 0.0), 10u);
    EXPECT_EQ(compressed_length(3, 0.99), 1u);
    EXPECT_EQ(compressed_length(10, 0.25), 8u);  // 7.5 rounds away from zero
    EXPECT_THROW(compressed_length(10, 1.0), std::invalid_argument);
    EXPECT_THROW(compressed_length(10, -0.1), std::invalid_argument);
    EXPECT_THROW(compressed_length(0, 0.5), std::invalid_argument);
}

TEST(Losses, KlHandExample) {
    // KL([1/2,1/2] || [1/4,3/4]) = 0.5 ln 2 + 0.5 ln(2/3); second row identical.
    Tensor p = Tensor::from_rows({{0.5, 0.5}, {0.2, 0.8}});
    Tensor q = Tensor::from_rows({{0.25, 0.75}, {0.2, 0.8}});
    const double expected = 0.5 * (0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0));
    EXPECT_NEAR(kl_divergence(p, q, 0.0), expected, 1e-15);
    Tape tape;
    EXPECT_NEAR(loss_pred(p, tape.constant(q), 0.0).value().item(), expected, 1e-15);
    EXPECT_NEAR(kl_divergence(p, p), 0.0, 1e-11);
}

TEST(Losses, KlIsNonNegative) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        Tensor p = random_stochastic(3, 5, s), q = random_stochastic(3, 5, s + 100);
        EXPECT_GE(kl_divergence(p, q), 0.0);
        Tape tape;
        EXPECT_NEAR(loss_pred(p, tape.constant(q)).value().item(), kl_divergence(p, q), 1e-14);
    }
}

TEST(Losses, EntropyExtremes) {
    Tape tape;
    EXPECT_NEAR(loss_entropy(tape.constant(Tensor::matrix(3, 8, 1.0 / 8))).value().item(), std::log(8.0), 1e-10);
    EXPECT_NEAR(loss_entropy(tape.constant(Tensor::identity(4))).value().item(), 0.0, 1e-10);
    Tensor P = random_stochastic(3, 6, 9);
    EXPECT_NEAR(loss_entropy(tape.constant(P)).value().item(), row_entropy(P), 1e-14);
}

TEST(Losses, CollapseIsMaxColumnMass) {
    Tensor P = Tensor::from_rows({{0.5, 0.5, 0, 0}, {0, 1, 0, 0}, {0, 0.25, 0.75, 0}});
    Tape tape;
    EXPECT_DOUBLE_EQ(loss_collapse(tape.constant(P)).value().item(), 1.75);
    EXPECT_DOUBLE_EQ(max_column_sum(P), 1.75);
    // Lower bound m/n is reached by uniform rows.
    EXPECT_NEAR(max_column_sum(Tensor::matrix(2, 4, 0.25)), 0.5, 1e-15);
}

TEST(Losses, GradientsOfAllThreeTerms) {
    Tensor orig = random_stochastic(3, 4, 20);
    auto r = finite_diff_check(
        [&](Tape&, std::span<const Var> p) {
            Var P = row_softmax(p[0]);
            Var comp = row_softmax(matmul(p[1], transpose(P)));
            return add(add(loss_pred(orig, comp), loss_entropy(P)), loss_collapse(P));
        },
        {random_matrix(4, 6, 21), random_matrix(3, 6, 22)});
    EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(CompressionMatrix, FileRoundTrip) {
    auto P = CompressionMatrix(random_stochastic(3, 7, 30));
    std::stringstream ss;
    write_compression_matrix(ss, P);
    auto back = read_compression_matrix(ss);
    EXPECT_EQ(back.matrix(), P.matrix());
    std::stringstream bad("VTCT");
    EXPECT_THROW(read_compression_matrix(bad), std::runtime_error);
}

TEST(TopK, TiesAndOrdering) {
    const std::vector<double> s{0.1, 0.9, 0.5, 0.9, 0.2};
    EXPECT_EQ(top_k_indices(s, 2), (std::vector<std::size_t>{1, 3}));
    EXPECT_EQ(top_k_indices(s, 3), (std::vector<std::size_t>{1, 2, 3}));
    EXPECT_EQ(top_k_indices(std::vector<double>{1, 1, 1}, 2), (std::vector<std::size_t>{0, 1}));
    EXPECT_EQ(top_k_indices(s, 0), std::vector<std::size_t>{});
    EXPECT_THROW(top_k_indices(s, 6), std::invalid_argument);
}

TEST(Spearman, KnownCases) {
    const std::vector<double> a{1, 2, 3, 4, 5};
    EXPECT_NEAR(spearman(a, std::vector<double>{2, 4, 6, 8, 10}), 1.0, 1e-15);
    EXPECT_NEAR(spearman(a, std::vector<double>{5, 4, 3, 2, 1}), -1.0, 1e-15);
    EXPECT_EQ(spearman(a, std::vector<double>{3, 3, 3, 3, 3}), 0.0);
    // Ties: ranks of {1,2,2,3} are {1, 2.5, 2.5, 4}.
    const double r = spearman(std::vector<double>{1, 2, 2, 3}, std::vector<double>{1, 2, 3, 4});
    const double expected = 4.5 / std::sqrt(4.5 * 5.0);
    EXPECT_NEAR(r, expected, 1e-14);
}

TEST(Overlap, ReportFields) {
    auto P = CompressionMatrix::selection(std::vector<std::size_t>{0, 2, 2}, 6);
    const std::vector<double> scores{0.9, 0.1, 0.8, 0.7, 0.0, 0.0};
    const OverlapReport r = retained_token_analysis(P, scores);
    EXPECT_EQ(r.retained, (std::vector<std::size_t>{0, 2}));
    EXPECT_EQ(r.top_scored, (std::vector<std::size_t>{0, 2, 3}));
    EXPECT_DOUBLE_EQ(r.overlap_fraction, 1.0);
    EXPECT_DOUBLE_EQ(r.chance, 0.5);
    EXPECT_EQ(overlap_to_json(r).at("chance").get<double>(), 0.5);
}

// Decoder stand-in for the fixed-matrix optimizer: trace = softmax(P X W).
TraceObjective linear_objective(const Tensor& X, const Tensor& W) {
    Tape tape;
    Tensor ref = row_softmax(matmul(tape.constant(X), tape.constant(W))).value();
    return {ref, [W](Tape& t, Var tokens) { return row_softmax(matmul(tokens, t.constant(W))); }};
}

TEST(FixedMatrix, HistoryAndInvariants) {
    const Tensor X = random_matrix(8, 3, 40), W = random_matrix(3, 4, 41);
    // The stand-in trace has one row per token, so m = n here.
    FixedMatrixConfig cfg;
    cfg.epochs = 30;
    cfg.lr = 1.0;
    const std::size_t m = 8;
    const auto r = train_fixed_matrix(X, linear_objective(X, W), cfg, m, 1);
    EXPECT_EQ(r.history.size(), 30u);
    EXPECT_EQ(r.P.m(), m);
    EXPECT_EQ(r.P.n(), 8u);
    EXPECT_NO_THROW(validate_compression(r.P.matrix()));
    EXPECT_LT(r.final.l_pred, r.history.front().l_pred);
}

TEST(FixedMatrix, SeededRunsRepeatAndBadConfigThrows) {
    const Tensor X = random_matrix(5, 3, 50), W = random_matrix(3, 4, 51);
    FixedMatrixConfig cfg;
    cfg.epochs = 5;
    const auto a = train_fixed_matrix(X, linear_objective(X, W), cfg, 5, 7);
    const auto b = train_fixed_matrix(X, linear_objective(X, W), cfg, 5, 7);
    EXPECT_EQ(a.P.matrix(), b.P.matrix());
    cfg.lr = -1;
    EXPECT_THROW(train_fixed_matrix(X, linear_objective(X, W), cfg, 5, 7), std::invalid_argument);
}

TEST(FixedMatrix, NonFiniteLossRaisesDivergence) {
    const Tensor X = random_matrix(4, 3, 60), W = random_matrix(3, 4, 61);
    TraceObjective obj = linear_objective(X, W);
    // Healthy for the first few evaluations, then the trace turns non-finite.
    auto calls = std::make_shared<std::size_t>(0);
    auto inner = obj.compressed_trace;
    obj.compressed_trace = [inner, calls](Tape& t, Var tokens) {
        const Var q = inner(t, tokens);
        return ++*calls > 4 ? scale(q, std::numeric_limits<double>::infinity()) : q;
    };
    FixedMatrixConfig cfg;
    cfg.epochs = 50;
    try {
        train_fixed_matrix(X, obj, cfg, 4, 1);
        FAIL() << "expected divergence";
    } catch (const DivergenceError& e) {
        EXPECT_GE(e.step(), 1u);
        EXPECT_LT(e.step(), 50u);
    }
}

}  // namespace
}  // namespace vtc
