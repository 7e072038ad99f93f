// Copyright (C) 2026 The vtcompress Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vtc/autodiff.hpp"
#include "vtc/compression.hpp"
#include "vtc/fixed_matrix.hpp"

namespace vtc {

/// Dimensions and gains of the frozen patch-recall decoder.
///
/// Image token j (width image_width()):
///   [ a*code(j) | onehot(j mod G) | slot block G x C : onehot(j mod G, c_j) | onehot(c_j) ]
/// where code(j) is a unit-norm sinusoidal code of 2F dims. The decoder
/// attends from a position prompt back to the image tokens by code
/// similarity; the gated feed-forward layer reads the slot of the queried
/// phase plus a weaker shared class channel.
struct FrozenModelSpec {
    std::size_t n_classes = 8;       // C
    std::size_t n_heads = 1;
    std::size_t pos_freqs = 16;      // F
    std::size_t phase_period = 8;    // G
    std::size_t n_max = 1024;        // largest position a prompt may name
    double pos_amplitude = 4.0;      // a
    double attn_scale = 30.0;        // score = attn_scale * code(q) . code(j)
    double slot_gain = 6.0;
    double shared_gain = 0.45;
    /// Slot features below this level are gated off by the feed-forward
    /// ReLU, so heavily diluted merges stop carrying the slot signal.
    double slot_threshold = 0.0;
    double temperature = 0.25;
    double weight_noise = 1e-4;

    void validate() const;

    std::size_t code_width() const { return 2 * pos_freqs; }
    std::size_t slot_width() const { return phase_period * n_classes + n_classes; }
    std::size_t image_width() const { return code_width() + phase_period + slot_width(); }
    std::size_t model_width() const { return image_width() + code_width() + phase_period + 2 + n_classes; }
    /// C answers, one separator, n_max position prompts.
    std::size_t vocab_size() const { return n_classes + 1 + n_max; }
};

nlohmann::json spec_to_json(const FrozenModelSpec& spec);

/// Maps (position, class) patches to image-token rows.
class PatchEncoder {
public:
    explicit PatchEncoder(FrozenModelSpec spec);

    const FrozenModelSpec& spec() const { return m_spec; }
    /// Unit-norm positional code of width 2F.
    std::vector<double> position_code(std::size_t j) const;
    Tensor encode(std::span<const std::size_t> classes) const;

private:
    FrozenModelSpec m_spec;
    std::vector<double> m_freqs;
};

struct Turn {
    std::size_t query = 0;
    std::size_t gold = 0;
};

struct DialogueEpisode {
    std::uint64_t id = 0;
    std::vector<std::size_t> classes;
    std::vector<Turn> turns;
    Tensor image_tokens;

    std::size_t n() const { return classes.size(); }
};

struct DatasetConfig {
    /// One entry gives fixed-resolution episodes; several entries draw n per
    /// episode uniformly from the list.
    std::vector<std::size_t> n_tokens{64};
    std::size_t n_turns = 3;
    std::size_t n_classes = 8;
    std::size_t count = 0;
    std::uint64_t seed = 0;
    /// Probability that patch j+1 copies the class of patch j; otherwise a
    /// fresh uniform class is drawn.
    double coherence = 0.5;

    void validate() const;
};

std::vector<DialogueEpisode> gen_episodes(const PatchEncoder& encoder, const DatasetConfig& cfg);

// Episode file layout: magic "VTCE", u32 version, u64 n_tokens (0 when
// variable), u64 n_turns, u64 C, u64 count, u64 seed, u64 image width, then for
// every episode: u64 id, u64 n, u64[n] classes, u64 turns, (u64 query, u64
// gold)[turns], tensor image tokens.
inline constexpr std::uint32_t kEpisodeFileVersion = 1;
void write_episodes(std::ostream& out, const DatasetConfig& cfg, std::size_t image_width,
                    const std::vector<DialogueEpisode>& episodes);
std::vector<DialogueEpisode> read_episodes(std::istream& in);
void save_episodes(const std::string& path, const DatasetConfig& cfg, std::size_t image_width,
                   const std::vector<DialogueEpisode>& episodes);
std::vector<DialogueEpisode> load_episodes(const std::string& path);
nlohmann::json episodes_manifest(const DatasetConfig& cfg, const std::vector<DialogueEpisode>& episodes);

class FrozenModel;

/// Per-layer key/value store for incremental decoding. Append-only.
class KVCache {
public:
    KVCache() = default;
    KVCache(std::size_t layers, std::size_t key_width, std::size_t value_width);

    bool initialized() const { return !m_layers.empty(); }
    std::size_t length() const { return m_length; }
    std::size_t layers() const { return m_layers.size(); }

    void append(std::size_t layer, std::span<const double> key, std::span<const double> value);
    /// Marks one position complete once every layer has appended it.
    void commit();

    std::span<const double> keys(std::size_t layer) const { return m_layers.at(layer).keys; }
    std::span<const double> values(std::size_t layer) const { return m_layers.at(layer).values; }
    std::size_t key_width() const { return m_key_width; }
    std::size_t value_width() const { return m_value_width; }

private:
    struct Layer {
        std::vector<double> keys;
        std::vector<double> values;
    };
    std::vector<Layer> m_layers;
    std::size_t m_key_width = 0;
    std::size_t m_value_width = 0;
    std::size_t m_length = 0;
};

/// Output at one position: answer-class logits and their softmax.
struct StepOutput {
    std::vector<double> logits;
    std::vector<double> probs;
};

/// Single-layer decoder with frozen, analytically set weights plus seeded
/// noise. Model-space layout (width model_width()):
///   [ image block | query code | query phase | is_sep | is_query | answer ]
class FrozenModel {
public:
    const FrozenModelSpec& spec() const { return m_spec; }
    const PatchEncoder& encoder() const { return m_encoder; }

    std::size_t width() const { return m_spec.model_width(); }
    std::size_t head_key_width() const { return m_spec.code_width(); }
    std::size_t head_value_width() const { return m_spec.slot_width(); }

    std::size_t sep_token() const { return m_spec.n_classes; }
    std::size_t position_token(std::size_t q) const;
    std::size_t answer_token(std::size_t c) const;

    /// Rows of the frozen input embedding for text/answer tokens.
    Tensor embed(std::span<const std::size_t> token_ids) const;
    /// Zero-pads image tokens into model space.
    Tensor project_image(const Tensor& image_tokens) const;

    // Frozen weights. Attention: W_q, W_k (width x heads*key), W_v (width x
    // heads*value), W_o (heads*value x width). Feed-forward: A, B (width x
    // hidden) and the bias b form the gate h = (rA) * relu(rB + b); U (hidden x C)
    // reads out.
    const Tensor& w_q() const { return m_wq; }
    const Tensor& w_k() const { return m_wk; }
    const Tensor& w_v() const { return m_wv; }
    const Tensor& w_o() const { return m_wo; }
    const Tensor& ffn_a() const { return m_a; }
    const Tensor& ffn_b() const { return m_b; }
    const Tensor& ffn_bias() const { return m_bias; }
    const Tensor& ffn_u() const { return m_u; }
    const Tensor& embedding() const { return m_embed; }

    /// FNV-1a over every weight byte; used to check the freeze contract.
    std::uint64_t fingerprint() const;

private:
    friend FrozenModel build_patch_recall_model(const FrozenModelSpec& spec, std::uint64_t seed);
    explicit FrozenModel(FrozenModelSpec spec);

    FrozenModelSpec m_spec;
    PatchEncoder m_encoder;
    Tensor m_wq, m_wk, m_wv, m_wo, m_a, m_b, m_bias, m_u, m_embed;
};

FrozenModel build_patch_recall_model(const FrozenModelSpec& spec, std::uint64_t seed);

/// Full-sequence pass over model-space rows; fills a fresh cache and returns
/// the output at the last position.
std::pair<KVCache, StepOutput> prefill(const FrozenModel& model, const Tensor& sequence);
/// Appends one model-space row (or vocabulary token) and returns its output.
StepOutput decode_step(const FrozenModel& model, KVCache& cache, std::span<const double> row);
StepOutput decode_token(const FrozenModel& model, KVCache& cache, std::size_t token_id);

/// Cache-free causal recomputation: one output per position.
std::vector<StepOutput> full_forward(const FrozenModel& model, const Tensor& sequence);

/// Attention weights (head-averaged) of the last row of `prompt_ids`, run
/// after the image tokens, over the image positions.
std::vector<double> prompt_attention(const FrozenModel& model, const Tensor& image_tokens,
                                     std::span<const std::size_t> prompt_ids);

/// Text fed before the answer of a turn: [SEP, POS(query)].
std::vector<std::size_t> turn_prompt(const FrozenModel& model, const Turn& turn);
inline constexpr std::size_t kAnswerLength = 1;

/// Inputs a reducer may consult. Prompt-agnostic reducers must ignore
/// everything except `image_tokens`.
struct ReductionRequest {
    const Tensor& image_tokens;
    std::uint64_t episode_id = 0;
    const FrozenModel* model = nullptr;
    /// Turn-1 prompt ids; only prompt-dependent reducers read it.
    std::optional<std::vector<std::size_t>> first_prompt;
};

class TokenReducer {
public:
    virtual ~TokenReducer() = default;
    virtual std::string name() const = 0;
    virtual bool prompt_dependent() const { return false; }
    virtual CompressionMatrix reduce(const ReductionRequest& request) const = 0;
};

enum class DecodeMode { Forced, Greedy };

struct TurnResult {
    std::size_t answer = 0;
    bool correct = false;
    /// kAnswerLength x C distributions at the answer positions.
    Tensor trace;
};

struct DialogueResult {
    std::vector<TurnResult> turns;
    std::size_t image_tokens_in = 0;
    std::size_t image_tokens_kept = 0;
    std::size_t reductions = 0;
};

/// Reduces the image once, prefills once and serves every turn from the same
/// cache. Forced mode feeds `forced_answers` (gold when empty) back;
/// greedy mode feeds the argmax.
DialogueResult run_dialogue(const FrozenModel& model,
                            const DialogueEpisode& episode,
                            const TokenReducer* reducer,
                            DecodeMode mode,
                            std::span<const std::size_t> forced_answers = {});

/// Differentiable teacher-forced trace (turns x C) for compressed image
/// tokens, forcing `answers` (one per turn).
Var forced_trace(Tape& tape, const FrozenModel& model, Var image_tokens, const DialogueEpisode& episode,
                 std::span<const std::size_t> answers);

/// Uncompressed greedy run: the answers to force and the reference trace.
struct ReferenceRun {
    std::vector<std::size_t> answers;
    Tensor trace;
};
ReferenceRun reference_run(const FrozenModel& model, const DialogueEpisode& episode);

/// Objective for the per-image optimizer over all turns of an episode.
TraceObjective make_trace_objective(const FrozenModel& model, const DialogueEpisode& episode);

}  // namespace vtc
