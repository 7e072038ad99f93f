// Copyright (C) 2026 The vtcompress Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>

#include "vtc/compression.hpp"
#include "vtc/meta_generator.hpp"
#include "vtc/toy_lvlm.hpp"

namespace vtc {

/// m distinct uniformly drawn selection rows, sorted by source index.
CompressionMatrix random_matrix(std::size_t n, std::size_t m, std::uint64_t seed);

/// Equidistant selection at round(i * n / m), clamped to n - 1 and pushed
/// forward past duplicates.
CompressionMatrix sample_matrix(std::size_t n, std::size_t m);

/// Rows uniform over the fractional-stride windows of fractional_avg_pool.
CompressionMatrix spatial_pool_matrix(std::size_t n, std::size_t m, std::size_t kernel);

/// Top-m tokens by score (ties to the lower index), sorted by source index.
CompressionMatrix attention_prune_matrix(std::span<const double> prompt_attention, std::size_t m);

enum class ReducerKind { Identity, Random, Sample, SpatialPool, AttentionPrune, Meta };

std::string to_string(ReducerKind kind);
ReducerKind reducer_kind_from_string(const std::string& name);

struct ReducerSpec {
    ReducerKind kind = ReducerKind::Sample;
    double rate = 0.75;
    std::uint64_t seed = 0;    // random only
    std::size_t kernel = 0;    // spatial_pool only; 0 selects ceil(n / m)

    void validate() const;
};

/// Builds the reducer for `spec`; `params` is required for the meta kind.
std::unique_ptr<TokenReducer> make_reducer(const ReducerSpec& spec, const MetaGeneratorParams* params = nullptr);

class IdentityReducer final : public TokenReducer {
public:
    std::string name() const override { return "identity"; }
    CompressionMatrix reduce(const ReductionRequest& request) const override;
};

class RandomReducer final : public TokenReducer {
public:
    RandomReducer(double rate, std::uint64_t seed) : m_rate(rate), m_seed(seed) {}
    std::string name() const override { return "random"; }
    /// Each episode draws from its own stream derived from (seed, episode id).
    CompressionMatrix reduce(const ReductionRequest& request) const override;

private:
    double m_rate;
    std::uint64_t m_seed;
};

class SampleReducer final : public TokenReducer {
public:
    explicit SampleReducer(double rate) : m_rate(rate) {}
    std::string name() const override { return "sample"; }
    CompressionMatrix reduce(const ReductionRequest& request) const override;

private:
    double m_rate;
};

class SpatialPoolReducer final : public TokenReducer {
public:
    SpatialPoolReducer(double rate, std::size_t kernel) : m_rate(rate), m_kernel(kernel) {}
    std::string name() const override { return "spatial_pool"; }
    CompressionMatrix reduce(const ReductionRequest& request) const override;

private:
    double m_rate;
    std::size_t m_kernel;
};

/// Keeps the image tokens the turn-1 prompt attends to most.
class AttentionPruneReducer final : public TokenReducer {
public:
    explicit AttentionPruneReducer(double rate) : m_rate(rate) {}
    std::string name() const override { return "attention_prune"; }
    bool prompt_dependent() const override { return true; }
    CompressionMatrix reduce(const ReductionRequest& request) const override;

private:
    double m_rate;
};

class MetaReducer final : public TokenReducer {
public:
    MetaReducer(MetaGeneratorParams params, double rate);
    std::string name() const override { return "meta"; }
    CompressionMatrix reduce(const ReductionRequest& request) const override;

private:
    MetaGeneratorParams m_params;
    double m_rate;
};

}  // namespace vtc
