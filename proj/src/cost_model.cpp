// Copyright (C) 2026 The vtcompress Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtc/cost_model.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cinttypes>
#include <cstdio>
#include <ostream>
#include <stdexcept>

#include "vtc/compression.hpp"

namespace vtc {

namespace {

std::uint64_t mul(std::uint64_t a, std::uint64_t b) {
    std::uint64_t out = 0;
    if (__builtin_mul_overflow(a, b, &out)) {
        throw std::overflow_error("cost model: FLOP count overflows 64 bits");
    }
    return out;
}

std::uint64_t add(std::uint64_t a, std::uint64_t b) {
    std::uint64_t out = 0;
    if (__builtin_add_overflow(a, b, &out)) {
        throw std::overflow_error("cost model: FLOP count overflows 64 bits");
    }
    return out;
}

// Linear layers of one token through one layer.
std::uint64_t per_token_linear(const ModelDims& d) {
    return add(mul(8, mul(d.d_model, d.d_model)), mul(6, mul(d.d_model, d.ffn_width)));
}

std::uint64_t logits_flops(const ModelDims& d) {
    return mul(2, mul(d.d_model, d.vocab));
}

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t k = v.size() / 2;
    return v.size() % 2 ? v[k] : 0.5 * (v[k - 1] + v[k]);
}

}  // namespace

void ModelDims::validate() const {
    if (layers == 0 || d_model == 0 || n_heads == 0 || ffn_width == 0 || vocab == 0 || bytes_per_element == 0) {
        throw std::invalid_argument("ModelDims: every dimension must be positive");
    }
    if (d_model % n_heads != 0) {
        throw std::invalid_argument("ModelDims: d_model must be divisible by n_heads");
    }
}

nlohmann::json dims_to_json(const ModelDims& dims) {
    return {{"layers", dims.layers},   {"d_model", dims.d_model}, {"n_heads", dims.n_heads},
            {"ffn_width", dims.ffn_width}, {"vocab", dims.vocab},     {"bytes_per_element", dims.bytes_per_element}};
}

ModelDims llama_7b_dims() {
    return ModelDims{};
}

std::uint64_t prefill_attention_score_flops(const ModelDims& dims, std::uint64_t length) {
    return mul(dims.layers, mul(2, mul(mul(length, length), dims.d_model)));
}

std::uint64_t prefill_flops(const ModelDims& dims, std::uint64_t length) {
    const std::uint64_t linear = mul(dims.layers, mul(length, per_token_linear(dims)));
    // Scores and the value product have the same shape.
    const std::uint64_t attention = mul(2, prefill_attention_score_flops(dims, length));
    return add(add(linear, attention), length > 0 ? logits_flops(dims) : 0);
}

std::uint64_t decode_attention_flops(const ModelDims& dims, std::uint64_t context) {
    return mul(dims.layers, mul(4, mul(context, dims.d_model)));
}

std::uint64_t decode_token_flops(const ModelDims& dims, std::uint64_t context) {
    return add(add(mul(dims.layers, per_token_linear(dims)), decode_attention_flops(dims, context)),
               logits_flops(dims));
}

std::uint64_t kv_cache_bytes(const ModelDims& dims, std::uint64_t context) {
    return mul(2, mul(dims.layers, mul(context, mul(dims.d_model, dims.bytes_per_element))));
}

CostReport estimate_cost(const ModelDims& dims,
                         std::uint64_t n_visual,
                         std::uint64_t n_text_per_turn,
                         std::uint64_t answer_len,
                         std::uint64_t turns,
                         double rate) {
    dims.validate();
    if (n_visual == 0) {
        throw std::invalid_argument("estimate_cost: n_visual must be positive");
    }
    CostReport r;
    r.n_visual = n_visual;
    r.n_visual_kept = compressed_length(n_visual, rate);
    r.n_text_per_turn = n_text_per_turn;
    r.answer_len = answer_len;
    r.turns = turns;
    r.rate = rate;

    r.prefill_length = r.n_visual_kept + n_text_per_turn;
    r.prefill_attention_score_flops = prefill_attention_score_flops(dims, r.prefill_length);
    r.prefill_flops = prefill_flops(dims, r.prefill_length);
    r.prefill_kv_bytes = kv_cache_bytes(dims, r.prefill_length);

    std::uint64_t ctx = r.prefill_length;
    for (std::uint64_t t = 0; t < turns; ++t) {
        std::uint64_t turn_flops = 0;
        const std::uint64_t fed = (t == 0 ? 0 : n_text_per_turn) + answer_len;
        for (std::uint64_t k = 0; k < fed; ++k) {
            ++ctx;
            turn_flops = add(turn_flops, decode_token_flops(dims, ctx));
        }
        r.per_turn_decode_flops.push_back(turn_flops);
        r.decode_flops = add(r.decode_flops, turn_flops);
    }
    r.final_context = ctx;
    r.total_flops = add(r.prefill_flops, r.decode_flops);
    r.kv_memory_bytes = kv_cache_bytes(dims, ctx);
    return r;
}

nlohmann::json cost_to_json(const CostReport& r) {
    return {{"flop_convention", kFlopConvention},
            {"rate", r.rate},
            {"n_visual", r.n_visual},
            {"n_visual_kept", r.n_visual_kept},
            {"n_text_per_turn", r.n_text_per_turn},
            {"answer_len", r.answer_len},
            {"turns", r.turns},
            {"prefill_length", r.prefill_length},
            {"final_context", r.final_context},
            {"prefill_attention_score_flops", r.prefill_attention_score_flops},
            {"prefill_flops", r.prefill_flops},
            {"per_turn_decode_flops", r.per_turn_decode_flops},
            {"decode_flops", r.decode_flops},
            {"total_flops", r.total_flops},
            {"prefill_kv_bytes", r.prefill_kv_bytes},
            {"kv_memory_bytes", r.kv_memory_bytes}};
}

void write_cost_csv_header(std::ostream& out) {
    out << "rate,n_visual,n_visual_kept,prefill_length,final_context,prefill_attention_score_flops,"
           "prefill_flops,decode_flops,total_flops,prefill_kv_bytes,kv_memory_bytes\n";
}

void write_cost_csv_row(std::ostream& out, const CostReport& r) {
    char rate[32];
    *std::to_chars(rate, rate + sizeof rate - 1, r.rate).ptr = '\0';
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "%s,%" PRIu64 ",%" PRIu64 ",%" PRIu64 ",%" PRIu64 ",%" PRIu64 ",%" PRIu64 ",%" PRIu64
                  ",%" PRIu64 ",%" PRIu64 ",%" PRIu64 "\n",
                  rate, r.n_visual, r.n_visual_kept, r.prefill_length, r.final_context,
                  r.prefill_attention_score_flops, r.prefill_flops, r.decode_flops, r.total_flops,
                  r.prefill_kv_bytes, r.kv_memory_bytes);
    out << buf;
}

RuntimeComparison measure_toy_runtime(const FrozenModel& model,
                                      const DialogueEpisode& episode,
                                      const TokenReducer& reducer,
                                      std::size_t repeats) {
    if (repeats < 3) {
        throw std::invalid_argument("measure_toy_runtime: need at least 3 repeats");
    }
    RuntimeComparison cmp;
    cmp.base.name = "none";
    cmp.reduced.name = reducer.name();

    auto time_one = [&](RuntimeArm& arm, const TokenReducer* r) {
        const auto t0 = std::chrono::steady_clock::now();
        const DialogueResult res = run_dialogue(model, episode, r, DecodeMode::Greedy);
        const auto t1 = std::chrono::steady_clock::now();
        arm.seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
        if (arm.answers.empty()) {
            for (const auto& turn : res.turns) {
                arm.answers.push_back(turn.answer);
                arm.correct.push_back(turn.correct);
            }
        }
    };
    for (std::size_t k = 0; k < repeats; ++k) {
        time_one(cmp.base, nullptr);
        time_one(cmp.reduced, &reducer);
    }
    for (RuntimeArm* arm : {&cmp.base, &cmp.reduced}) {
        arm->median = median_of(arm->seconds);
        arm->min = *std::min_element(arm->seconds.begin(), arm->seconds.end());
        arm->max = *std::max_element(arm->seconds.begin(), arm->seconds.end());
    }
    return cmp;
}

nlohmann::json runtime_to_json(const RuntimeComparison& cmp) {
    auto arm_json = [](const RuntimeArm& a) {
        return nlohmann::json{{"name", a.name},     {"seconds", a.seconds}, {"median", a.median},
                              {"min", a.min},       {"max", a.max},         {"answers", a.answers},
                              {"correct", a.correct}};
    };
    return {{"base", arm_json(cmp.base)}, {"reduced", arm_json(cmp.reduced)}};
}

}  // namespace vtc
