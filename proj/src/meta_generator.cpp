// Copyright (C) 2026 The vtcompress Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtc/meta_generator.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "vtc/rng.hpp"

namespace vtc {

std::string to_string(PositionalMode mode) {
    switch (mode) {
    case PositionalMode::Sinusoidal:
        return "sinusoidal";
    case PositionalMode::Learned:
        return "learned";
    case PositionalMode::Disabled:
        return "disabled";
    }
    throw std::invalid_argument("unknown positional mode");
}

PositionalMode positional_mode_from_string(const std::string& name) {
    if (name == "sinusoidal") {
        return PositionalMode::Sinusoidal;
    }
    if (name == "learned") {
        return PositionalMode::Learned;
    }
    if (name == "disabled") {
        return PositionalMode::Disabled;
    }
    throw std::invalid_argument("unknown positional mode '" + name + "' (expected sinusoidal, learned or disabled)");
}

void MetaGeneratorParams::validate() const {
    if (d == 0 || d_c == 0 || n_max == 0 || kernel == 0) {
        throw std::invalid_argument("generator: d, d_c, n_max and kernel must be positive");
    }
    if (d_c > d) {
        throw std::invalid_argument("generator: d_c=" + std::to_string(d_c) + " exceeds d=" + std::to_string(d));
    }
    auto check = [](const Tensor& t, std::size_t r, std::size_t c, const char* name) {
        if (t.rank() != 2 || t.rows() != r || t.cols() != c) {
            throw std::invalid_argument(std::string("generator: ") + name + " has shape " + shape_string(t.shape()) +
                                        ", expected [" + std::to_string(r) + "x" + std::to_string(c) + "]");
        }
        if (!t.all_finite()) {
            throw std::invalid_argument(std::string("generator: ") + name + " has non-finite entries");
        }
    };
    check(e_pos, n_max, d, "E_pos");
    check(w_q, d, d_c, "W_q");
    check(w_k, d, d_c, "W_k");
    check(omega, 1, d_c, "omega");
}

std::vector<Tensor*> MetaGeneratorParams::learnable() {
    std::vector<Tensor*> out{&w_q, &w_k, &omega};
    if (positional == PositionalMode::Learned) {
        out.push_back(&e_pos);
    }
    return out;
}

std::vector<const Tensor*> MetaGeneratorParams::learnable() const {
    std::vector<const Tensor*> out{&w_q, &w_k, &omega};
    if (positional == PositionalMode::Learned) {
        out.push_back(&e_pos);
    }
    return out;
}

std::size_t default_compressed_width(std::size_t d) {
    return std::min(d, std::max<std::size_t>(4, d / 4));
}

Tensor sinusoidal_table(std::size_t n_max, std::size_t d) {
    Tensor t = Tensor::matrix(n_max, d);
    for (std::size_t pos = 0; pos < n_max; ++pos) {
        for (std::size_t i = 0; i < d; ++i) {
            const double pair = static_cast<double>(i / 2 * 2);
            const double angle = static_cast<double>(pos) / std::pow(10000.0, pair / static_cast<double>(d));
            t(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return t;
}

MetaGeneratorParams init_params(std::size_t d,
                                std::size_t d_c,
                                std::size_t n_max,
                                std::size_t kernel,
                                std::uint64_t seed,
                                PositionalMode positional) {
    if (d == 0 || d_c == 0 || d_c > d || n_max == 0 || kernel == 0) {
        throw std::invalid_argument("init_params: invalid dims d=" + std::to_string(d) + " d_c=" +
                                    std::to_string(d_c) + " n_max=" + std::to_string(n_max) +
                                    " kernel=" + std::to_string(kernel));
    }
    MetaGeneratorParams p;
    p.d = d;
    p.d_c = d_c;
    p.n_max = n_max;
    p.kernel = kernel;
    p.positional = positional;
    p.e_pos = positional == PositionalMode::Disabled ? Tensor::matrix(n_max, d) : sinusoidal_table(n_max, d);
    Rng rng(seed);
    p.w_q = rng.normal_matrix(d, d_c, 1.0 / std::sqrt(static_cast<double>(d_c)));
    p.w_k = p.w_q;
    p.omega = Tensor::matrix(1, d_c, 1.0);
    return p;
}

std::vector<Var> GeneratorVars::learnable() const {
    std::vector<Var> out{w_q, w_k, omega};
    if (e_pos_learnable) {
        out.push_back(e_pos);
    }
    return out;
}

GeneratorVars attach(Tape& tape, const MetaGeneratorParams& params, bool requires_grad) {
    GeneratorVars v;
    v.w_q = tape.leaf(params.w_q, requires_grad);
    v.w_k = tape.leaf(params.w_k, requires_grad);
    v.omega = tape.leaf(params.omega, requires_grad);
    v.e_pos_learnable = params.positional == PositionalMode::Learned;
    v.e_pos = tape.leaf(params.e_pos, requires_grad && v.e_pos_learnable);
    return v;
}

namespace {

void check_lengths(const MetaGeneratorParams& params, std::size_t n, std::size_t d, std::size_t m) {
    if (d != params.d) {
        throw std::invalid_argument("generator: tokens have width " + std::to_string(d) + ", expected " +
                                    std::to_string(params.d));
    }
    if (n > params.n_max) {
        throw std::invalid_argument("generator: n=" + std::to_string(n) + " exceeds n_max=" +
                                    std::to_string(params.n_max));
    }
    if (m == 0 || m > n) {
        throw std::invalid_argument("generator: need 1 <= m <= n, got m=" + std::to_string(m) + " n=" +
                                    std::to_string(n));
    }
}

Var positioned(const GeneratorVars& vars, const MetaGeneratorParams& params, Var X) {
    if (params.positional == PositionalMode::Disabled) {
        return X;
    }
    std::vector<std::size_t> rows(X.rows());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    return add(X, gather_rows(vars.e_pos, rows));
}

}  // namespace

Var raw_scores(const GeneratorVars& vars, const MetaGeneratorParams& params, Var X, std::size_t m) {
    check_lengths(params, X.rows(), X.cols(), m);
    Var xe = positioned(vars, params, X);
    Var q = matmul(fractional_avg_pool(xe, m, params.kernel), vars.w_q);
    Var k = matmul(xe, vars.w_k);
    Var s = matmul(mul_rowvec(q, vars.omega), transpose(k));
    return scale(s, 1.0 / std::sqrt(static_cast<double>(params.d_c)));
}

Var generate(const GeneratorVars& vars, const MetaGeneratorParams& params, Var X, std::size_t m) {
    return row_softmax(raw_scores(vars, params, X, m));
}

Tensor raw_scores(const MetaGeneratorParams& params, const Tensor& X, std::size_t m) {
    Tape tape;
    const GeneratorVars vars = attach(tape, params, false);
    return raw_scores(vars, params, tape.constant(X), m).value();
}

CompressionMatrix generate(const MetaGeneratorParams& params, const Tensor& X, std::size_t m) {
    Tape tape;
    const GeneratorVars vars = attach(tape, params, false);
    return CompressionMatrix(generate(vars, params, tape.constant(X), m).value());
}

Tensor pooling_scores(const MetaGeneratorParams& params, const Tensor& X, std::size_t m) {
    Tape tape;
    const GeneratorVars vars = attach(tape, params, false);
    Var x = tape.constant(X);
    check_lengths(params, X.rows(), X.cols(), m);
    Var xe = positioned(vars, params, x);
    Var q = matmul(fractional_avg_pool(xe, m, params.kernel), vars.w_q);
    Var k = matmul(xe, vars.w_k);
    return matmul(mul_rowvec(q, vars.omega), transpose(k)).value();
}

std::size_t count_params(const MetaGeneratorParams& params) {
    if (params.d == 0 || params.d_c == 0) {
        throw std::invalid_argument("count_params: d and d_c must be positive");
    }
    std::size_t total = 2 * params.d * params.d_c + params.d_c;
    if (params.positional == PositionalMode::Learned) {
        total += params.n_max * params.d;
    }
    return total;
}

void write_checkpoint(std::ostream& out, const MetaGeneratorParams& params) {
    params.validate();
    io::write_magic(out, "VTCK");
    io::write_u32(out, kCheckpointVersion);
    io::write_u64(out, params.d);
    io::write_u64(out, params.d_c);
    io::write_u64(out, params.kernel);
    io::write_u64(out, params.n_max);
    io::write_u32(out, static_cast<std::uint32_t>(params.positional));
    write_tensor(out, params.w_q);
    write_tensor(out, params.w_k);
    write_tensor(out, params.omega);
    if (params.positional == PositionalMode::Learned) {
        write_tensor(out, params.e_pos);
    }
}

MetaGeneratorParams read_checkpoint(std::istream& in) {
    io::expect_magic(in, "VTCK");
    const std::uint32_t version = io::read_u32(in);
    if (version != kCheckpointVersion) {
        throw std::runtime_error("checkpoint version " + std::to_string(version) + " is not supported");
    }
    MetaGeneratorParams p;
    p.d = io::read_u64(in);
    p.d_c = io::read_u64(in);
    p.kernel = io::read_u64(in);
    p.n_max = io::read_u64(in);
    const std::uint32_t mode = io::read_u32(in);
    if (mode > 2) {
        throw std::runtime_error("checkpoint has unknown positional mode " + std::to_string(mode));
    }
    p.positional = static_cast<PositionalMode>(mode);
    p.w_q = read_tensor(in);
    p.w_k = read_tensor(in);
    p.omega = read_tensor(in);
    if (p.positional == PositionalMode::Learned) {
        p.e_pos = read_tensor(in);
    } else if (p.positional == PositionalMode::Sinusoidal) {
        p.e_pos = sinusoidal_table(p.n_max, p.d);
    } else {
        p.e_pos = Tensor::matrix(p.n_max, p.d);
    }
    p.validate();
    return p;
}

void save_checkpoint(const std::string& path, const MetaGeneratorParams& params) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot open checkpoint for writing: " + path);
    }
    write_checkpoint(out, params);
    if (!out) {
        throw std::runtime_error("failed writing checkpoint: " + path);
    }
}

MetaGeneratorParams load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open checkpoint: " + path);
    }
    return read_checkpoint(in);
}

nlohmann::json checkpoint_manifest(const MetaGeneratorParams& params) {
    return {{"version", kCheckpointVersion},
            {"d", params.d},
            {"d_c", params.d_c},
            {"kernel", params.kernel},
            {"n_max", params.n_max},
            {"positional", to_string(params.positional)},
            {"learnable_params", count_params(params)}};
}

}  // namespace vtc
