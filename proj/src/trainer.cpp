// Copyright (C) 2026 The vtcompress Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtc/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "vtc/baselines.hpp"
#include "vtc/compression.hpp"
#include "vtc/rng.hpp"

namespace vtc {

void TrainConfig::validate() const {
    if (!(lr >= 0.0) || !(grad_clip_max > 0.0)) {
        throw std::invalid_argument("train: lr must be nonnegative and grad_clip_max positive");
    }
    if (epochs == 0 || batch_size == 0) {
        throw std::invalid_argument("train: epochs and batch_size must be positive");
    }
    if (!(alpha_entropy >= 0.0) || !(alpha_collapse >= 0.0)) {
        throw std::invalid_argument("train: loss weights must be nonnegative");
    }
    if (!(rate > 0.0 && rate < 1.0)) {
        throw std::invalid_argument("train: rate must lie in (0, 1), got " + std::to_string(rate));
    }
    if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) {
        throw std::invalid_argument("train: holdout_fraction must lie in [0, 1)");
    }
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
    return {{"lr", cfg.lr},
            {"grad_clip_max", cfg.grad_clip_max},
            {"clip", cfg.clip},
            {"epochs", cfg.epochs},
            {"batch_size", cfg.batch_size},
            {"alpha_entropy", cfg.alpha_entropy},
            {"alpha_collapse", cfg.alpha_collapse},
            {"rate", cfg.rate},
            {"seed", cfg.seed},
            {"holdout_fraction", cfg.holdout_fraction}};
}

Var total_loss(Var l_pred, Var l_entropy, Var l_collapse, double alpha_entropy, double alpha_collapse) {
    return add(add(l_pred, scale(l_entropy, alpha_entropy)), scale(l_collapse, alpha_collapse));
}

ClipStats sgd_step(const std::vector<Tensor*>& params, std::vector<Tensor> grads, double lr,
                   std::optional<double> clip_max) {
    if (grads.size() != params.size()) {
        throw std::invalid_argument("sgd_step: " + std::to_string(grads.size()) + " gradients for " +
                                    std::to_string(params.size()) + " parameters");
    }
    double sq = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!grads[i].same_shape(*params[i])) {
            throw std::invalid_argument("sgd_step: gradient " + std::to_string(i) + " has shape " +
                                        shape_string(grads[i].shape()));
        }
        if (!grads[i].all_finite()) {
            throw NumericalError("sgd_step: non-finite gradient");
        }
        for (double g : grads[i].data()) {
            sq += g * g;
        }
    }
    ClipStats stats;
    stats.norm_pre = std::sqrt(sq);
    stats.norm_post = stats.norm_pre;
    double factor = 1.0;
    if (clip_max && stats.norm_pre > *clip_max) {
        factor = *clip_max / stats.norm_pre;
        stats.norm_post = *clip_max;
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        for (std::size_t k = 0; k < p.size(); ++k) {
            p[k] -= lr * (factor * grads[i][k]);
        }
    }
    return stats;
}

EpisodeLoss episode_loss(Tape& tape, const GeneratorVars& vars, const MetaGeneratorParams& params,
                         const FrozenModel& model, const DialogueEpisode& episode, const ReferenceRun& reference,
                         double rate) {
    const std::size_t m = compressed_length(episode.n(), rate);
    const Var X = tape.constant(episode.image_tokens);
    const Var P = generate(vars, params, X, m);
    const Var comp = forced_trace(tape, model, apply_compression(P, X), episode, reference.answers);
    return {loss_pred(reference.trace, comp), loss_entropy(P), loss_collapse(P)};
}

EvalResult evaluate(const FrozenModel& model, const std::vector<DialogueEpisode>& dataset,
                    const TokenReducer* reducer) {
    EvalResult r;
    std::vector<std::size_t> hits, seen;
    for (const auto& ep : dataset) {
        const DialogueResult res = run_dialogue(model, ep, reducer, DecodeMode::Greedy);
        if (hits.size() < res.turns.size()) {
            hits.resize(res.turns.size(), 0);
            seen.resize(res.turns.size(), 0);
        }
        for (std::size_t t = 0; t < res.turns.size(); ++t) {
            hits[t] += res.turns[t].correct ? 1 : 0;
            ++seen[t];
        }
    }
    r.episodes = dataset.size();
    for (std::size_t t = 0; t < hits.size(); ++t) {
        r.per_turn.push_back(static_cast<double>(hits[t]) / static_cast<double>(seen[t]));
    }
    if (!r.per_turn.empty()) {
        r.mean = std::accumulate(r.per_turn.begin(), r.per_turn.end(), 0.0) / static_cast<double>(r.per_turn.size());
    }
    return r;
}

TrainResult train_meta(const MetaGeneratorParams& init, const FrozenModel& model,
                       const std::vector<DialogueEpisode>& dataset, const TrainConfig& cfg) {
    cfg.validate();
    init.validate();
    if (dataset.empty()) {
        throw std::invalid_argument("train_meta: empty dataset");
    }
    const auto held = static_cast<std::size_t>(std::floor(cfg.holdout_fraction * static_cast<double>(dataset.size())));
    const std::size_t n_train = dataset.size() - held;
    if (n_train == 0) {
        throw std::invalid_argument("train_meta: hold-out leaves no training episodes");
    }
    const std::vector<DialogueEpisode> holdout(dataset.begin() + static_cast<std::ptrdiff_t>(n_train), dataset.end());

    // Uncompressed references never change: the decoder is frozen.
    std::vector<ReferenceRun> refs;
    refs.reserve(n_train);
    for (std::size_t i = 0; i < n_train; ++i) {
        refs.push_back(reference_run(model, dataset[i]));
    }

    TrainResult result{init, init, {}, std::nullopt};
    MetaGeneratorParams& params = result.final_params;
    double best = -1.0;
    std::size_t step = 0;
    const std::optional<double> clip = cfg.clip ? std::optional<double>(cfg.grad_clip_max) : std::nullopt;

    for (std::size_t epoch = 0; epoch < cfg.epochs && !result.divergence; ++epoch) {
        std::vector<std::size_t> order(n_train);
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed(cfg.seed, "epoch/" + std::to_string(epoch)));
        std::shuffle(order.begin(), order.end(), rng.engine());

        for (std::size_t begin = 0; begin < n_train; begin += cfg.batch_size, ++step) {
            const std::size_t end = std::min(n_train, begin + cfg.batch_size);
            const double inv = 1.0 / static_cast<double>(end - begin);
            StepMetrics sm;
            sm.step = step;
            try {
                Tape tape;
                const GeneratorVars vars = attach(tape, params, true);
                std::vector<Var> totals;
                for (std::size_t b = begin; b < end; ++b) {
                    const std::size_t e = order[b];
                    const EpisodeLoss l = episode_loss(tape, vars, params, model, dataset[e], refs[e], cfg.rate);
                    sm.l_pred += l.l_pred.value().item() * inv;
                    sm.l_entropy += l.l_entropy.value().item() * inv;
                    sm.l_collapse += l.l_collapse.value().item() * inv;
                    totals.push_back(total_loss(l.l_pred, l.l_entropy, l.l_collapse, cfg.alpha_entropy,
                                                cfg.alpha_collapse));
                }
                const Var loss = scale(sum(concat_rows(totals)), inv);
                sm.total = loss.value().item();
                if (!std::isfinite(sm.total)) {
                    throw NumericalError("non-finite loss");
                }
                tape.backward(loss);
                std::vector<Tensor> grads;
                for (const Var& v : vars.learnable()) {
                    grads.push_back(tape.grad(v));
                }
                MetaGeneratorParams next = params;
                const ClipStats cs = sgd_step(next.learnable(), std::move(grads), cfg.lr, clip);
                next.validate();
                sm.gnorm_pre = cs.norm_pre;
                sm.gnorm_post = cs.norm_post;
                params = std::move(next);
            } catch (const NumericalError& err) {
                result.divergence = Divergence{step, err.what()};
                break;
            } catch (const std::invalid_argument& err) {
                // validate() rejects non-finite parameters after the update.
                result.divergence = Divergence{step, err.what()};
                break;
            }
            result.metrics.steps.push_back(sm);
        }
        if (result.divergence) {
            break;
        }
        const MetaReducer reducer(params, cfg.rate);
        EpochMetrics em{epoch, holdout.empty() ? EvalResult{} : evaluate(model, holdout, &reducer)};
        result.metrics.epochs.push_back(em);
        if (em.holdout.mean > best) {
            best = em.holdout.mean;
            result.best_params = params;
            result.metrics.best_epoch = epoch;
            result.metrics.best_accuracy = em.holdout.mean;
        }
    }
    if (result.divergence && result.metrics.epochs.empty()) {
        // No checkpoint yet: fall back to the last finite parameters.
        result.best_params = params;
    }
    return result;
}

void write_step_csv(std::ostream& out, const std::vector<StepMetrics>& steps) {
    out << "step,l_pred,l_entropy,l_collapse,total,gnorm_pre,gnorm_post\n";
    char buf[512];
    for (const auto& s : steps) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", s.step, s.l_pred, s.l_entropy,
                      s.l_collapse, s.total, s.gnorm_pre, s.gnorm_post);
        out << buf;
    }
}

nlohmann::json train_summary(const TrainConfig& cfg, const TrainResult& result) {
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : result.metrics.epochs) {
        epochs.push_back({{"epoch", e.epoch}, {"holdout_per_turn", e.holdout.per_turn}, {"holdout_mean", e.holdout.mean}});
    }
    nlohmann::json j = {{"config", train_config_to_json(cfg)},
                        {"steps", result.metrics.steps.size()},
                        {"epochs", epochs},
                        {"best_epoch", result.metrics.best_epoch},
                        {"best_holdout_mean", result.metrics.best_accuracy},
                        {"diverged", result.divergence.has_value()}};
    if (result.divergence) {
        j["divergence"] = {{"step", result.divergence->step}, {"message", result.divergence->message}};
    }
    return j;
}

}  // namespace vtc
