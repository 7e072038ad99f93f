// Copyright (C) 2026 The vtcompress Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "vtc/tensor.hpp"

namespace vtc {

/// Seeded generator used for every random draw in the engine. There is no
/// default seed: callers always pass one explicitly.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : m_engine(seed) {}

    double uniform();
    double normal(double mean = 0.0, double stddev = 1.0);
    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n);
    /// k distinct indices from [0, n) in draw order.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

    Tensor normal_matrix(std::size_t rows, std::size_t cols, double stddev);

    std::mt19937_64& engine() { return m_engine; }

private:
    std::mt19937_64 m_engine;
};

std::uint64_t fnv1a64(std::string_view bytes);

/// Child seed for a named sub-stream: splitmix64(base ^ fnv1a64(tag)).
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag);

}  // namespace vtc
