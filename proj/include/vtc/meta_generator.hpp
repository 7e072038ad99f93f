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
#include "vtc/compression.hpp"

namespace vtc {

enum class PositionalMode : std::uint32_t {
    Sinusoidal = 0,  // fixed table, not trained
    Learned = 1,     // starts from the sinusoidal table, trained with the rest
    Disabled = 2,    // zero table
};

std::string to_string(PositionalMode mode);
PositionalMode positional_mode_from_string(const std::string& name);

/// Learnable compression-matrix generator. For image tokens X (n x d):
///   Xe = X + E_pos[0:n]
///   Q  = FracPool(Xe, m, kernel) W_q        (m x d_c)
///   K  = Xe W_k                             (n x d_c)
///   P  = softmax_rows(Q diag(omega) K^T / sqrt(d_c))
struct MetaGeneratorParams {
    std::size_t d = 0;
    std::size_t d_c = 0;
    std::size_t n_max = 0;
    std::size_t kernel = 3;
    PositionalMode positional = PositionalMode::Sinusoidal;
    Tensor e_pos;  // n_max x d
    Tensor w_q;    // d x d_c
    Tensor w_k;    // d x d_c
    Tensor omega;  // 1 x d_c

    void validate() const;
    /// Trainable tensors in a fixed order: w_q, w_k, omega[, e_pos].
    std::vector<Tensor*> learnable();
    std::vector<const Tensor*> learnable() const;
};

inline constexpr std::size_t kDefaultNMax = 1024;

/// max(4, d/4), capped at d.
std::size_t default_compressed_width(std::size_t d);

/// Standard sine/cosine table with base 10000: even columns sin, odd cos.
Tensor sinusoidal_table(std::size_t n_max, std::size_t d);

/// W_q = W_k with i.i.d. N(0, 1/d_c) entries, omega = 1.
MetaGeneratorParams init_params(std::size_t d,
                                std::size_t d_c,
                                std::size_t n_max,
                                std::size_t kernel,
                                std::uint64_t seed,
                                PositionalMode positional = PositionalMode::Sinusoidal);

/// Params attached to a tape. `e_pos` is a leaf only in Learned mode.
struct GeneratorVars {
    Var w_q;
    Var w_k;
    Var omega;
    Var e_pos;
    bool e_pos_learnable = false;

    std::vector<Var> learnable() const;
};

GeneratorVars attach(Tape& tape, const MetaGeneratorParams& params, bool requires_grad = true);

Var raw_scores(const GeneratorVars& vars, const MetaGeneratorParams& params, Var X, std::size_t m);
Var generate(const GeneratorVars& vars, const MetaGeneratorParams& params, Var X, std::size_t m);

// Tape-free conveniences.
Tensor raw_scores(const MetaGeneratorParams& params, const Tensor& X, std::size_t m);
CompressionMatrix generate(const MetaGeneratorParams& params, const Tensor& X, std::size_t m);

/// Unscaled Q diag(omega) K^T, the bilinear form whose expectation at
/// initialization is d * d_c * sigma_c^2 * sigma_w^2 for window members.
Tensor pooling_scores(const MetaGeneratorParams& params, const Tensor& X, std::size_t m);

/// 2 * d * d_c + d_c, plus the positional table when it is learned.
std::size_t count_params(const MetaGeneratorParams& params);

// Binary layout: magic "VTCK", u32 version, u64 d, u64 d_c, u64 kernel,
// u64 n_max, u32 positional mode, then W_q, W_k, omega (and E_pos when
// learned) in tensor format.
inline constexpr std::uint32_t kCheckpointVersion = 1;
void write_checkpoint(std::ostream& out, const MetaGeneratorParams& params);
MetaGeneratorParams read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const MetaGeneratorParams& params);
MetaGeneratorParams load_checkpoint(const std::string& path);
nlohmann::json checkpoint_manifest(const MetaGeneratorParams& params);

}  // namespace vtc
