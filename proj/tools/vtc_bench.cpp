// Copyright (C) 2026 The vtcompress Authors
// SPDX-License-Identifier: Apache-2.0
//
// vtc_bench: dataset generation, training, evaluation sweeps, fixed-matrix
// studies and cost estimates for the token-compression engine.

#include <iostream>
#include <optional>
#include <string>
#include <utility>

#include <CLI11.hpp>

#include "vtc/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"vtc_bench - visual token compression experiments"};
    app.require_subcommand(1);
    app.set_version_flag("--version", vtc::kEngineVersion);

    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> checkpoint;
    std::optional<std::size_t> episode;

    const std::pair<const char*, const char*> commands[] = {
        {"gen-data", "write train/eval patch-recall episodes"},
        {"train", "train the compression-matrix generator"},
        {"eval", "accuracy per turn for every reducer, rate and seed"},
        {"fixed-matrix", "optimize one matrix for a single eval episode"},
        {"cost", "analytic FLOP/KV sweep, optional calibration and toy timing"},
    };
    for (const auto& [name, help] : commands) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("--config", config_path, "INI or JSON experiment config (defaults when omitted)");
        sub->add_option("--out", out_dir, "output directory, overrides [output] dir");
        sub->add_option("--seed", seed, "replaces the top-level seed");
        if (std::string(name) == "eval") {
            sub->add_option("--checkpoint", checkpoint, "generator checkpoint for the meta reducer");
        }
        if (std::string(name) == "fixed-matrix") {
            sub->add_option("--episode", episode, "eval-set episode index");
        }
    }
    CLI11_PARSE(app, argc, argv);

    const std::string command = app.get_subcommands().front()->get_name();
    vtc::ExperimentConfig cfg;
    try {
        cfg = config_path.empty() ? vtc::default_config(seed.value_or(0)) : vtc::load_config(config_path, seed);
    } catch (const vtc::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return vtc::kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return vtc::kExitConfig;
    }
    vtc::CommandOptions opts;
    opts.out_dir = out_dir;
    opts.checkpoint = checkpoint;
    opts.episode = episode;
    return vtc::run_command(command, cfg, opts, std::cout, std::cerr);
}
