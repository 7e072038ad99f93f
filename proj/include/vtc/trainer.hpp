// Copyright (C) 2026 The vtcompress Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vtc/autodiff.hpp"
#include "vtc/meta_generator.hpp"
#include "vtc/toy_lvlm.hpp"

namespace vtc {

struct TrainConfig {
    double lr = 0.1;
    double grad_clip_max = 1.0;
    /// Global-norm clipping on/off; the ablation grid switches it off.
    bool clip = true;
    std::size_t epochs = 2;
    std::size_t batch_size = 8;
    double alpha_entropy = 1.0;
    double alpha_collapse = 1.0;
    double rate = 0.75;
    std::uint64_t seed = 0;
    /// Share of the training episodes held out for checkpoint selection.
    double holdout_fraction = 0.1;

    void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& cfg);

/// One optimizer step. Loss fields are batch means.
struct StepMetrics {
    std::size_t step = 0;
    double l_pred = 0.0;
    double l_entropy = 0.0;
    double l_collapse = 0.0;
    double total = 0.0;
    double gnorm_pre = 0.0;
    double gnorm_post = 0.0;
};

struct EvalResult {
    std::vector<double> per_turn;  // Acc_t
    double mean = 0.0;             // mean of Acc_t
    std::size_t episodes = 0;
};

struct EpochMetrics {
    std::size_t epoch = 0;
    EvalResult holdout;
};

struct TrainMetrics {
    std::vector<StepMetrics> steps;
    std::vector<EpochMetrics> epochs;
    std::size_t best_epoch = 0;
    double best_accuracy = 0.0;
};

struct Divergence {
    std::size_t step = 0;
    std::string message;
};

struct TrainResult {
    MetaGeneratorParams final_params;
    /// Best held-out checkpoint; on divergence, the last finite parameters.
    MetaGeneratorParams best_params;
    TrainMetrics metrics;
    std::optional<Divergence> divergence;
};

/// L_pred + alpha_e * L_entropy + alpha_c * L_collapse.
Var total_loss(Var l_pred, Var l_entropy, Var l_collapse, double alpha_entropy, double alpha_collapse);

struct ClipStats {
    double norm_pre = 0.0;
    double norm_post = 0.0;
};

/// Clips `grads` by global norm to `clip_max` (when given), then
/// params -= lr * grads. Throws NumericalError on non-finite gradients.
ClipStats sgd_step(const std::vector<Tensor*>& params, std::vector<Tensor> grads, double lr,
                   std::optional<double> clip_max);

/// Per-episode loss terms on `tape` for the generator in `vars`.
struct EpisodeLoss {
    Var l_pred;
    Var l_entropy;
    Var l_collapse;
};
EpisodeLoss episode_loss(Tape& tape, const GeneratorVars& vars, const MetaGeneratorParams& params,
                         const FrozenModel& model, const DialogueEpisode& episode, const ReferenceRun& reference,
                         double rate);

/// Trains on `dataset`, holding out its tail for checkpoint selection.
TrainResult train_meta(const MetaGeneratorParams& init, const FrozenModel& model,
                       const std::vector<DialogueEpisode>& dataset, const TrainConfig& cfg);

/// Greedy accuracy per turn; `reducer` may be null (uncompressed).
EvalResult evaluate(const FrozenModel& model, const std::vector<DialogueEpisode>& dataset,
                    const TokenReducer* reducer);

/// CSV header: step,l_pred,l_entropy,l_collapse,total,gnorm_pre,gnorm_post
void write_step_csv(std::ostream& out, const std::vector<StepMetrics>& steps);
nlohmann::json train_summary(const TrainConfig& cfg, const TrainResult& result);

}  // namespace vtc
