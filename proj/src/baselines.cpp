// Copyright (C) 2026 The vtcompress Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtc/baselines.hpp"

#include <algorithm>
#include <stdexcept>
#include <vector>

#include "vtc/fixed_matrix.hpp"
#include "vtc/rng.hpp"

namespace vtc {

namespace {

void check_counts(const char* who, std::size_t n, std::size_t m) {
    if (m == 0 || m > n) {
        throw std::invalid_argument(std::string(who) + ": need 1 <= m <= n, got m=" + std::to_string(m) +
                                    " n=" + std::to_string(n));
    }
}

}  // namespace

CompressionMatrix random_matrix(std::size_t n, std::size_t m, std::uint64_t seed) {
    check_counts("random_matrix", n, m);
    Rng rng(seed);
    auto sources = rng.sample_without_replacement(n, m);
    std::sort(sources.begin(), sources.end());
    return CompressionMatrix::selection(sources, n);
}

CompressionMatrix sample_matrix(std::size_t n, std::size_t m) {
    check_counts("sample_matrix", n, m);
    auto sources = pool_window_starts(n, m, 1);
    for (std::size_t i = 1; i < m; ++i) {
        sources[i] = std::max(sources[i], sources[i - 1] + 1);
    }
    // Pushing forward can overrun the end; pull the tail back into range.
    for (std::size_t i = m; i-- > 0;) {
        const std::size_t cap = n - (m - i);
        if (sources[i] > cap) {
            sources[i] = cap;
        }
    }
    return CompressionMatrix::selection(sources, n);
}

CompressionMatrix spatial_pool_matrix(std::size_t n, std::size_t m, std::size_t kernel) {
    check_counts("spatial_pool_matrix", n, m);
    const auto starts = pool_window_starts(n, m, kernel);
    const std::size_t k = effective_kernel(n, kernel);
    Tensor P = Tensor::matrix(m, n);
    const double w = 1.0 / static_cast<double>(k);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = starts[i]; j < starts[i] + k; ++j) {
            P(i, j) = w;
        }
    }
    return CompressionMatrix(std::move(P));
}

CompressionMatrix attention_prune_matrix(std::span<const double> prompt_attention, std::size_t m) {
    check_counts("attention_prune_matrix", prompt_attention.size(), m);
    const auto sources = top_k_indices(prompt_attention, m);
    return CompressionMatrix::selection(sources, prompt_attention.size());
}

std::string to_string(ReducerKind kind) {
    switch (kind) {
    case ReducerKind::Identity:
        return "identity";
    case ReducerKind::Random:
        return "random";
    case ReducerKind::Sample:
        return "sample";
    case ReducerKind::SpatialPool:
        return "spatial_pool";
    case ReducerKind::AttentionPrune:
        return "attention_prune";
    case ReducerKind::Meta:
        return "meta";
    }
    throw std::invalid_argument("unknown reducer kind");
}

ReducerKind reducer_kind_from_string(const std::string& name) {
    if (name == "none") {
        return ReducerKind::Identity;
    }
    for (ReducerKind k : {ReducerKind::Identity, ReducerKind::Random, ReducerKind::Sample, ReducerKind::SpatialPool,
                          ReducerKind::AttentionPrune, ReducerKind::Meta}) {
        if (to_string(k) == name) {
            return k;
        }
    }
    throw std::invalid_argument("unknown reducer '" + name +
                                "' (expected identity, random, sample, spatial_pool, attention_prune or meta)");
}

void ReducerSpec::validate() const {
    if (kind != ReducerKind::Identity && !(rate > 0.0 && rate < 1.0)) {
        throw std::invalid_argument("reducer " + to_string(kind) + ": rate must lie in (0, 1), got " +
                                    std::to_string(rate));
    }
}

std::unique_ptr<TokenReducer> make_reducer(const ReducerSpec& spec, const MetaGeneratorParams* params) {
    spec.validate();
    switch (spec.kind) {
    case ReducerKind::Identity:
        return std::make_unique<IdentityReducer>();
    case ReducerKind::Random:
        return std::make_unique<RandomReducer>(spec.rate, spec.seed);
    case ReducerKind::Sample:
        return std::make_unique<SampleReducer>(spec.rate);
    case ReducerKind::SpatialPool:
        return std::make_unique<SpatialPoolReducer>(spec.rate, spec.kernel);
    case ReducerKind::AttentionPrune:
        return std::make_unique<AttentionPruneReducer>(spec.rate);
    case ReducerKind::Meta:
        if (params == nullptr) {
            throw std::invalid_argument("reducer meta: a generator checkpoint is required");
        }
        return std::make_unique<MetaReducer>(*params, spec.rate);
    }
    throw std::invalid_argument("unknown reducer kind");
}

CompressionMatrix IdentityReducer::reduce(const ReductionRequest& request) const {
    return CompressionMatrix::identity(request.image_tokens.rows());
}

CompressionMatrix RandomReducer::reduce(const ReductionRequest& request) const {
    const std::size_t n = request.image_tokens.rows();
    const std::uint64_t seed = derive_seed(m_seed, "episode/" + std::to_string(request.episode_id));
    return random_matrix(n, compressed_length(n, m_rate), seed);
}

CompressionMatrix SampleReducer::reduce(const ReductionRequest& request) const {
    const std::size_t n = request.image_tokens.rows();
    return sample_matrix(n, compressed_length(n, m_rate));
}

CompressionMatrix SpatialPoolReducer::reduce(const ReductionRequest& request) const {
    const std::size_t n = request.image_tokens.rows();
    const std::size_t m = compressed_length(n, m_rate);
    const std::size_t kernel = m_kernel != 0 ? m_kernel : (n + m - 1) / m;
    return spatial_pool_matrix(n, m, kernel);
}

CompressionMatrix AttentionPruneReducer::reduce(const ReductionRequest& request) const {
    if (request.model == nullptr || !request.first_prompt) {
        throw std::invalid_argument("attention_prune: needs the model and the turn-1 prompt");
    }
    const auto scores = prompt_attention(*request.model, request.image_tokens, *request.first_prompt);
    return attention_prune_matrix(scores, compressed_length(scores.size(), m_rate));
}

MetaReducer::MetaReducer(MetaGeneratorParams params, double rate) : m_params(std::move(params)), m_rate(rate) {
    m_params.validate();
}

CompressionMatrix MetaReducer::reduce(const ReductionRequest& request) const {
    const std::size_t n = request.image_tokens.rows();
    return generate(m_params, request.image_tokens, compressed_length(n, m_rate));
}

}  // namespace vtc
