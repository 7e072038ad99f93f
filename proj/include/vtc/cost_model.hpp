// Copyright (C) 2026 The vtcompress Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "vtc/toy_lvlm.hpp"

namespace vtc {

/// Decoder dimensions for FLOP/memory accounting.
struct ModelDims {
    std::uint64_t layers = 32;
    std::uint64_t d_model = 4096;
    std::uint64_t n_heads = 32;
    std::uint64_t ffn_width = 11008;
    std::uint64_t vocab = 32000;
    /// Storage per cached key/value element (2 for fp16).
    std::uint64_t bytes_per_element = 2;

    void validate() const;
};

nlohmann::json dims_to_json(const ModelDims& dims);

/// A 7B-class LLaMA-style decoder (32 layers, width 4096, gated FFN 11008).
ModelDims llama_7b_dims();

// Conventions: 2 FLOPs per multiply-accumulate. Per layer and token the four
// attention projections cost 8d^2, the gated feed-forward (gate, up, down)
// 6*d*ffn. Prefill computes dense L x L score and value products (2*L^2*d
// each); a cached decode step at context c costs 2*c*d for each. Logits are
// produced only for tokens that are predicted (2*d*vocab each).
inline constexpr const char* kFlopConvention = "2 FLOPs per multiply-accumulate";

/// Attention-score FLOPs (QK^T only) of a dense prefill over L tokens.
std::uint64_t prefill_attention_score_flops(const ModelDims& dims, std::uint64_t length);
/// Full prefill over L tokens, including one logit readout.
std::uint64_t prefill_flops(const ModelDims& dims, std::uint64_t length);
/// Attention part (scores + values) of one cached step at context c.
std::uint64_t decode_attention_flops(const ModelDims& dims, std::uint64_t context);
/// One cached decode step at context c (the new token included), with logits.
std::uint64_t decode_token_flops(const ModelDims& dims, std::uint64_t context);
/// Keys and values of every layer for `context` positions.
std::uint64_t kv_cache_bytes(const ModelDims& dims, std::uint64_t context);

/// Cost of one multi-turn dialogue.
///
/// Schedule: the prefill covers the m kept visual tokens plus the turn-1
/// text and yields the first answer token. Every generated token is fed back
/// through the cache; turns 2..T first feed their text tokens, one cached
/// step each.
struct CostReport {
    std::uint64_t n_visual = 0;
    std::uint64_t n_visual_kept = 0;
    std::uint64_t n_text_per_turn = 0;
    std::uint64_t answer_len = 0;
    std::uint64_t turns = 0;
    double rate = 0.0;

    std::uint64_t prefill_length = 0;
    std::uint64_t final_context = 0;
    std::uint64_t prefill_attention_score_flops = 0;
    std::uint64_t prefill_flops = 0;
    std::vector<std::uint64_t> per_turn_decode_flops;
    std::uint64_t decode_flops = 0;
    std::uint64_t total_flops = 0;
    std::uint64_t prefill_kv_bytes = 0;
    std::uint64_t kv_memory_bytes = 0;  // at the final context
};

CostReport estimate_cost(const ModelDims& dims,
                         std::uint64_t n_visual,
                         std::uint64_t n_text_per_turn,
                         std::uint64_t answer_len,
                         std::uint64_t turns,
                         double rate);

nlohmann::json cost_to_json(const CostReport& report);
/// CSV header: rate,n_visual,n_visual_kept,prefill_length,final_context,
/// prefill_attention_score_flops,prefill_flops,decode_flops,total_flops,
/// prefill_kv_bytes,kv_memory_bytes
void write_cost_csv_header(std::ostream& out);
void write_cost_csv_row(std::ostream& out, const CostReport& report);

/// Wall-clock latency of one toy dialogue arm.
struct RuntimeArm {
    std::string name;
    std::vector<double> seconds;
    double median = 0.0;
    double min = 0.0;
    double max = 0.0;
    std::vector<std::size_t> answers;
    std::vector<bool> correct;
};

struct RuntimeComparison {
    RuntimeArm base;
    RuntimeArm reduced;
};

/// Times greedy dialogues without reduction and with `reducer`, alternating
/// the arms so drift hits both.
RuntimeComparison measure_toy_runtime(const FrozenModel& model,
                                      const DialogueEpisode& episode,
                                      const TokenReducer& reducer,
                                      std::size_t repeats);

nlohmann::json runtime_to_json(const RuntimeComparison& cmp);

}  // namespace vtc
