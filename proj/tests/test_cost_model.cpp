// Copyright (C) 2026 The vtcompress Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <numeric>
#include <sstream>

#include "vtc/baselines.hpp"
#include "vtc/cost_model.hpp"

namespace vtc {
namespace {

ModelDims small_dims() {
    return ModelDims{4, 64, 4, 172, 1000, 2};
}

TEST(CostModel, PrefillScoresAreQuadratic) {
    const ModelDims d = small_dims();
    for (std::uint64_t L : {1u, 7u, 100u, 640u}) {
        EXPECT_EQ(prefill_attention_score_flops(d, 2 * L), 4 * prefill_attention_score_flops(d, L));
    }
    // Through estimate_cost: doubling both token counts doubles the length.
    const auto a = estimate_cost(d, 100, 28, 0, 0, 0.0), b = estimate_cost(d, 200, 56, 0, 0, 0.0);
    EXPECT_EQ(b.prefill_attention_score_flops, 4 * a.prefill_attention_score_flops);
}

TEST(CostModel, HandExpandedClosedForm) {
    const ModelDims d = small_dims();
    const std::uint64_t L = 50;
    EXPECT_EQ(prefill_attention_score_flops(d, L), 4ull * 2 * L * L * 64);
    const std::uint64_t linear = 4ull * L * (8 * 64 * 64 + 6 * 64 * 172);
    EXPECT_EQ(prefill_flops(d, L), linear + 2 * prefill_attention_score_flops(d, L) + 2ull * 64 * 1000);
    EXPECT_EQ(decode_token_flops(d, 10), 4ull * (8 * 64 * 64 + 6 * 64 * 172) + 4ull * 4 * 10 * 64 + 2ull * 64 * 1000);
    EXPECT_EQ(kv_cache_bytes(d, 10), 2ull * 4 * 10 * 64 * 2);
}

TEST(CostModel, DecodeIsLinearInContext) {
    const ModelDims d = small_dims();
    const std::uint64_t base = decode_token_flops(d, 0);
    const std::uint64_t slope = decode_token_flops(d, 1) - base;
    for (std::uint64_t c : {2u, 17u, 1000u, 4096u}) {
        EXPECT_EQ(decode_token_flops(d, c), base + c * slope);
        EXPECT_EQ(decode_attention_flops(d, c), c * decode_attention_flops(d, 1));
    }
}

TEST(CostModel, CompressedOverUncompressedRatio) {
    const ModelDims d = llama_7b_dims();
    const std::uint64_t n_text = 40;
    const auto full = estimate_cost(d, 576, n_text, 8, 3, 0.0);
    const auto cut = estimate_cost(d, 576, n_text, 8, 3, 0.9);
    ASSERT_EQ(cut.n_visual_kept, 58u);  // round(57.6)
    const double lhs = static_cast<double>(cut.prefill_attention_score_flops) / full.prefill_attention_score_flops;
    const double rhs = std::pow((58.0 + n_text) / (576.0 + n_text), 2);
    EXPECT_NEAR(lhs, rhs, 1e-15);
}

TEST(CostModel, TotalsAreSumsOfParts) {
    const auto r = estimate_cost(small_dims(), 64, 10, 4, 3, 0.5);
    EXPECT_EQ(r.per_turn_decode_flops.size(), 3u);
    EXPECT_EQ(r.decode_flops, std::accumulate(r.per_turn_decode_flops.begin(), r.per_turn_decode_flops.end(),
                                              std::uint64_t{0}));
    EXPECT_EQ(r.total_flops, r.prefill_flops + r.decode_flops);
    EXPECT_EQ(r.prefill_length, 32u + 10);
    EXPECT_EQ(r.final_context, 42u + 4 + 2 * (10 + 4));
    EXPECT_EQ(r.kv_memory_bytes, kv_cache_bytes(small_dims(), r.final_context));
}

TEST(CostModel, NoTurnsMeansPrefillOnly) {
    const auto r = estimate_cost(small_dims(), 64, 10, 0, 0, 0.25);
    EXPECT_EQ(r.total_flops, r.prefill_flops);
    EXPECT_EQ(r.decode_flops, 0u);
    EXPECT_TRUE(r.per_turn_decode_flops.empty());
}

TEST(CostModel, MonotoneInEveryCount) {
    const ModelDims d = small_dims();
    const auto base = estimate_cost(d, 64, 10, 4, 3, 0.5);
    auto no_less = [&](const CostReport& r) {
        EXPECT_GE(r.prefill_flops, base.prefill_flops);
        EXPECT_GE(r.decode_flops, base.decode_flops);
        EXPECT_GE(r.total_flops, base.total_flops);
        EXPECT_GE(r.kv_memory_bytes, base.kv_memory_bytes);
        EXPECT_GE(r.prefill_attention_score_flops, base.prefill_attention_score_flops);
    };
    no_less(estimate_cost(d, 65, 10, 4, 3, 0.5));
    no_less(estimate_cost(d, 64, 11, 4, 3, 0.5));
    no_less(estimate_cost(d, 64, 10, 5, 3, 0.5));
    no_less(estimate_cost(d, 64, 10, 4, 4, 0.5));
}

TEST(CostModel, RateStrictlyReducesPrefill) {
    const ModelDims d = small_dims();
    for (std::uint64_t n : {2u, 10u, 576u}) {
        const auto base = estimate_cost(d, n, 5, 1, 1, 0.0);
        for (double r : {0.3, 0.5, 0.75, 0.95}) {
            EXPECT_LT(estimate_cost(d, n, 5, 1, 1, r).prefill_flops, base.prefill_flops) << n << " " << r;
        }
    }
    std::uint64_t prev = UINT64_MAX;
    for (double r : {0.0, 0.5, 0.75, 0.9, 0.95}) {
        const auto c = estimate_cost(d, 576, 64, 16, 3, r);
        EXPECT_LT(c.prefill_flops, prev);
        prev = c.prefill_flops;
    }
}

TEST(CostModel, ReductionTouchesVisualTokensOnly) {
    const auto r = estimate_cost(small_dims(), 100, 30, 2, 2, 0.9);
    EXPECT_EQ(r.n_visual_kept, 10u);
    EXPECT_EQ(r.prefill_length, 40u);
    EXPECT_EQ(r.n_text_per_turn, 30u);
}

TEST(CostModel, Errors) {
    ModelDims d = small_dims();
    EXPECT_THROW(estimate_cost(d, 0, 1, 1, 1, 0.0), std::invalid_argument);
    EXPECT_THROW(estimate_cost(d, 10, 1, 1, 1, 1.0), std::invalid_argument);
    d.layers = 0;
    EXPECT_THROW(estimate_cost(d, 10, 1, 1, 1, 0.0), std::invalid_argument);
    ModelDims huge{1u << 20, 1u << 20, 1, 1u << 20, 1, 2};
    EXPECT_THROW(estimate_cost(huge, 1u << 20, 0, 0, 0, 0.0), std::overflow_error);
}

TEST(CostModel, CsvAndJson) {
    const auto r = estimate_cost(small_dims(), 64, 10, 4, 3, 0.5);
    std::ostringstream os;
    write_cost_csv_header(os);
    write_cost_csv_row(os, r);
    const std::string text = os.str();
    EXPECT_EQ(text.substr(0, 5), "rate,");
    EXPECT_NE(text.find("\n0.5,64,32,42,"), std::string::npos);
    EXPECT_EQ(cost_to_json(r).at("total_flops").get<std::uint64_t>(), r.total_flops);
    EXPECT_EQ(cost_to_json(r).at("flop_convention"), kFlopConvention);
}

TEST(ToyRuntime, ReducedArmIsFasterAndSamplesCounted) {
    FrozenModelSpec spec;
    const FrozenModel model = build_patch_recall_model(spec, 1);
    DatasetConfig dc;
    dc.n_tokens = {1024};
    dc.count = 1;
    dc.seed = 5;
    const auto ep = gen_episodes(model.encoder(), dc).front();
    SampleReducer reducer(0.9);
    const auto cmp = measure_toy_runtime(model, ep, reducer, 3);
    EXPECT_EQ(cmp.base.seconds.size(), 3u);
    EXPECT_EQ(cmp.reduced.seconds.size(), 3u);
    EXPECT_LT(cmp.reduced.median, cmp.base.median);
    EXPECT_LE(cmp.base.min, cmp.base.median);
    EXPECT_GE(cmp.base.max, cmp.base.median);
    EXPECT_EQ(cmp.base.correct, (std::vector<bool>{true, true, true}));
    EXPECT_THROW(measure_toy_runtime(model, ep, reducer, 2), std::invalid_argument);
    // Same inputs, same answers: repeated timing does not perturb outputs.
    const auto again = measure_toy_runtime(model, ep, reducer, 3);
    EXPECT_EQ(again.reduced.answers, cmp.reduced.answers);
    EXPECT_EQ(again.reduced.correct, cmp.reduced.correct);
}

}  // namespace
}  // namespace vtc
