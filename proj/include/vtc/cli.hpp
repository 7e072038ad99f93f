// Copyright (C) 2026 The vtcompress Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "vtc/baselines.hpp"
#include "vtc/cost_model.hpp"
#include "vtc/fixed_matrix.hpp"
#include "vtc/meta_generator.hpp"
#include "vtc/toy_lvlm.hpp"
#include "vtc/trainer.hpp"

namespace vtc {

inline constexpr const char* kEngineVersion = "0.1.0";

/// Malformed or inconsistent configuration (exit status 2).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Missing or unwritable files (exit status 1).
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum ExitCode : int {
    kExitOk = 0,
    kExitIo = 1,
    kExitConfig = 2,
    kExitDivergence = 3,
};

struct DatasetSection {
    std::vector<std::size_t> n_tokens{64};
    std::size_t turns = 3;
    std::size_t train_count = 2000;
    std::size_t eval_count = 1000;
    double coherence = 0.5;
    std::uint64_t train_seed = 0;
    std::uint64_t eval_seed = 0;
    /// Where train.vtce / eval.vtce live; empty means the output directory.
    std::string dir;
};

struct GeneratorSection {
    std::size_t d_c = 0;  // 0 selects default_compressed_width
    std::size_t kernel = 3;
    std::size_t n_max = kDefaultNMax;
    PositionalMode positional = PositionalMode::Sinusoidal;
    std::uint64_t seed = 0;
};

struct EvalSection {
    std::vector<std::string> reducers{"none", "random", "sample", "meta"};
    std::vector<double> rates{0.75};
    std::vector<std::uint64_t> seeds{0};
    std::size_t pool_kernel = 0;
    /// Empty means <out>/best.ckpt.
    std::string checkpoint;
};

struct FixedMatrixSection {
    FixedMatrixConfig optimizer;
    double rate = 0.75;
    std::size_t episode = 0;
    std::uint64_t seed = 0;
};

struct CostSection {
    ModelDims dims;
    std::size_t n_visual = 576;
    std::size_t n_text = 64;
    std::size_t answer_len = 16;
    std::size_t turns = 3;
    std::vector<double> rates{0.0, 0.5, 0.75, 0.9, 0.95};
    bool calibrate = false;
    bool runtime = false;
    std::size_t runtime_tokens = 1024;
    double runtime_rate = 0.9;
    std::size_t runtime_repeats = 5;
    std::uint64_t runtime_seed = 0;
};

/// Fully resolved experiment configuration. Section seeds that are not given
/// explicitly derive from the top-level seed as derive_seed(seed, "<tag>") with
/// tags model, dataset/train, dataset/eval, generator, train, fixed_matrix,
/// cost/runtime.
struct ExperimentConfig {
    std::uint64_t seed = 0;
    FrozenModelSpec model;
    std::uint64_t model_seed = 0;
    DatasetSection dataset;
    GeneratorSection generator;
    TrainConfig train;
    EvalSection eval;
    FixedMatrixSection fixed_matrix;
    CostSection cost;
    std::string out_dir = "out";
};

/// Parses INI (default) or JSON (".json" suffix). `seed_override` replaces the
/// top-level seed before section seeds are derived.
ExperimentConfig load_config(const std::string& path, std::optional<std::uint64_t> seed_override = {});
ExperimentConfig parse_config(std::istream& in, bool json, std::optional<std::uint64_t> seed_override = {});
/// Config from defaults only.
ExperimentConfig default_config(std::uint64_t seed = 0);

nlohmann::json config_to_json(const ExperimentConfig& cfg);
/// FNV-1a of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);

struct CommandOptions {
    std::string out_dir;  // overrides [output] dir when set
    std::optional<std::string> checkpoint;
    std::optional<std::size_t> episode;
};

int cmd_gen_data(const ExperimentConfig& cfg, const CommandOptions& opts, std::ostream& log);
int cmd_train(const ExperimentConfig& cfg, const CommandOptions& opts, std::ostream& log);
int cmd_eval(const ExperimentConfig& cfg, const CommandOptions& opts, std::ostream& log);
int cmd_fixed_matrix(const ExperimentConfig& cfg, const CommandOptions& opts, std::ostream& log);
int cmd_cost(const ExperimentConfig& cfg, const CommandOptions& opts, std::ostream& log);

/// Dispatches by name and maps exceptions to exit codes, printing the error
/// to `err`.
int run_command(const std::string& command, const ExperimentConfig& cfg, const CommandOptions& opts,
                std::ostream& log, std::ostream& err);

/// Eval CSV header: method,rate,seed,acc_1..acc_T,avg
void write_eval_csv_header(std::ostream& out, std::size_t turns);

}  // namespace vtc
