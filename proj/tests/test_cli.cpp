// Copyright (C) 2026 The vtcompress Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <sstream>

#include "test_support.hpp"
#include "vtc/cli.hpp"
#include "vtc/rng.hpp"

namespace vtc {
namespace {

using testing::scratch_dir;
using testing::slurp;

const char* kSmallIni = R"(seed = 5
[dataset]
train_count = 60
eval_count = 40
[train]
lr = 10
epochs = 1
[eval]
reducers = none, random, sample, meta
rates = 0.5, 0.75, 0.9
seeds = 1, 2
[fixed_matrix]
epochs = 20
)";

ExperimentConfig parse_ini(const std::string& text, std::optional<std::uint64_t> seed = {}) {
    std::istringstream in(text);
    return parse_config(in, false, seed);
}

int run(const std::string& cmd, const ExperimentConfig& cfg, const std::filesystem::path& out,
        CommandOptions opts = {}) {
    opts.out_dir = out.string();
    std::ostringstream log, err;
    const int rc = run_command(cmd, cfg, opts, log, err);
    if (rc != kExitOk) {
        std::cerr << err.str();
    }
    return rc;
}

TEST(Config, DefaultsAndDerivedSeeds) {
    const ExperimentConfig cfg = default_config(7);
    EXPECT_EQ(cfg.seed, 7u);
    EXPECT_EQ(cfg.model_seed, derive_seed(7, "model"));
    EXPECT_EQ(cfg.dataset.train_seed, derive_seed(7, "dataset/train"));
    EXPECT_EQ(cfg.dataset.eval_seed, derive_seed(7, "dataset/eval"));
    EXPECT_EQ(cfg.generator.seed, derive_seed(7, "generator"));
    EXPECT_EQ(cfg.train.seed, derive_seed(7, "train"));
    EXPECT_EQ(cfg.train.lr, 0.1);
    EXPECT_EQ(cfg.train.grad_clip_max, 1.0);
}

TEST(Config, IniValuesAndExplicitSeedsWin) {
    const auto cfg = parse_ini("seed = 3\n[model]\nseed = 11\ntemperature = 0.5\n[dataset]\nn_tokens = 64, 144, 256\n"
                               "[train]\nclip = false\n[eval]\nreducers = sample\n");
    EXPECT_EQ(cfg.model_seed, 11u);
    EXPECT_EQ(cfg.model.temperature, 0.5);
    EXPECT_EQ(cfg.dataset.n_tokens, (std::vector<std::size_t>{64, 144, 256}));
    EXPECT_FALSE(cfg.train.clip);
    EXPECT_EQ(cfg.eval.reducers, std::vector<std::string>{"sample"});
    EXPECT_EQ(cfg.train.seed, derive_seed(3, "train"));
    // --seed replaces the top-level seed; explicit section seeds still hold.
    const auto over = parse_ini("seed = 3\n[model]\nseed = 11\n", 9);
    EXPECT_EQ(over.seed, 9u);
    EXPECT_EQ(over.model_seed, 11u);
    EXPECT_EQ(over.train.seed, derive_seed(9, "train"));
}

TEST(Config, JsonEquivalentToIni) {
    const auto ini = parse_ini("seed = 4\n[dataset]\nn_tokens = 64, 144\n[train]\nlr = 0.5\n");
    std::istringstream json(R"({"seed": 4, "dataset": {"n_tokens": [64, 144]}, "train": {"lr": 0.5}})");
    const auto js = parse_config(json, true);
    EXPECT_EQ(config_hash(ini), config_hash(js));
    EXPECT_EQ(config_to_json(ini), config_to_json(js));
}

TEST(Config, RejectsMalformedInput) {
    EXPECT_THROW(parse_ini("[train]\nlearning_rate = 1\n"), ConfigError);
    EXPECT_THROW(parse_ini("[bogus]\nx = 1\n"), ConfigError);
    EXPECT_THROW(parse_ini("[train]\nlr = fast\n"), ConfigError);
    EXPECT_THROW(parse_ini("[train]\nepochs = -1\n"), ConfigError);
    EXPECT_THROW(parse_ini("[train]\nclip = maybe\n"), ConfigError);
    EXPECT_THROW(parse_ini("[train]\nrate = 1.0\n"), ConfigError);
    EXPECT_THROW(parse_ini("[eval]\nreducers = fastv\n"), ConfigError);
    EXPECT_THROW(parse_ini("[generator]\npositional = rope\n"), ConfigError);
    EXPECT_THROW(parse_ini("[dataset]\nn_tokens = 2048\n"), ConfigError);
    EXPECT_THROW(parse_ini("[model\n"), ConfigError);
    EXPECT_THROW(load_config("/nonexistent/config.ini"), IoError);
}

TEST(Config, HashIgnoresOutputLocation) {
    auto a = parse_ini("[output]\ndir = x\n");
    auto b = parse_ini("[output]\ndir = y\n");
    auto c = parse_ini("[train]\nlr = 0.2\n");
    EXPECT_EQ(config_hash(a), config_hash(b));
    EXPECT_NE(config_hash(a), config_hash(c));
    EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(GenData, IdempotentAndManifested) {
    const auto cfg = parse_ini(kSmallIni);
    const auto a = scratch_dir("gen_a"), b = scratch_dir("gen_b");
    ASSERT_EQ(run("gen-data", cfg, a), kExitOk);
    ASSERT_EQ(run("gen-data", cfg, b), kExitOk);
    for (const char* f : {"train.vtce", "eval.vtce", "train.manifest.json", "eval.manifest.json",
                          "manifest_gen-data.json"}) {
        ASSERT_TRUE(std::filesystem::exists(a / f)) << f;
        if (std::string(f) != "manifest_gen-data.json") {
            EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
        }
    }
    const auto manifest = nlohmann::json::parse(slurp(a / "manifest_gen-data.json"));
    EXPECT_EQ(manifest.at("config_hash"), config_hash(cfg));
    EXPECT_EQ(manifest.at("engine_version"), kEngineVersion);
    EXPECT_EQ(manifest.at("seed"), 5u);
}

TEST(GenData, EmptyDatasetIsValid) {
    const auto cfg = parse_ini("[dataset]\ntrain_count = 0\neval_count = 0\n");
    const auto dir = scratch_dir("gen_empty");
    ASSERT_EQ(run("gen-data", cfg, dir), kExitOk);
    EXPECT_TRUE(load_episodes((dir / "eval.vtce").string()).empty());
    EXPECT_EQ(nlohmann::json::parse(slurp(dir / "eval.manifest.json")).at("count"), 0u);
    // Training on nothing is a configuration problem, not a crash.
    EXPECT_EQ(run("train", cfg, dir), kExitConfig);
}

TEST(GenData, VariableResolutionHistogram) {
    const auto cfg = parse_ini("[dataset]\nn_tokens = 64, 144, 256\ntrain_count = 30\neval_count = 0\n");
    const auto dir = scratch_dir("gen_var");
    ASSERT_EQ(run("gen-data", cfg, dir), kExitOk);
    const auto hist = nlohmann::json::parse(slurp(dir / "train.manifest.json")).at("n_histogram");
    std::size_t total = 0;
    for (const char* n : {"64", "144", "256"}) {
        ASSERT_TRUE(hist.contains(n));
        total += hist.at(n).get<std::size_t>();
    }
    EXPECT_EQ(total, 30u);
}

TEST(Train, MissingDatasetNamesPath) {
    const auto dir = scratch_dir("train_missing");
    CommandOptions opts;
    opts.out_dir = dir.string();
    std::ostringstream log, err;
    EXPECT_EQ(run_command("train", default_config(), opts, log, err), kExitIo);
    EXPECT_NE(err.str().find((dir / "train.vtce").string()), std::string::npos);
}

TEST(Train, DefaultSummaryRecordsOptimizerSettings) {
    auto cfg = parse_ini("[dataset]\ntrain_count = 20\neval_count = 0\n[train]\nepochs = 1\n");
    const auto dir = scratch_dir("train_defaults");
    ASSERT_EQ(run("gen-data", cfg, dir), kExitOk);
    ASSERT_EQ(run("train", cfg, dir), kExitOk);
    const auto summary = nlohmann::json::parse(slurp(dir / "summary.json"));
    EXPECT_EQ(summary.at("config").at("lr"), 0.1);
    EXPECT_EQ(summary.at("config").at("grad_clip_max"), 1.0);
    EXPECT_EQ(summary.at("config").at("alpha_entropy"), 1.0);
    EXPECT_EQ(summary.at("config").at("alpha_collapse"), 1.0);
    EXPECT_EQ(summary.at("config_hash"), config_hash(cfg));
    EXPECT_FALSE(summary.at("diverged").get<bool>());
}

TEST(Train, DivergenceExitStatus) {
    auto cfg = parse_ini("[dataset]\ntrain_count = 20\neval_count = 0\n[train]\nepochs = 1\nclip = false\nlr = 1e305\n");
    const auto dir = scratch_dir("train_diverge");
    ASSERT_EQ(run("gen-data", cfg, dir), kExitOk);
    EXPECT_EQ(run("train", cfg, dir), kExitDivergence);
    EXPECT_TRUE(nlohmann::json::parse(slurp(dir / "summary.json")).at("diverged").get<bool>());
}

class Pipeline : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir = new std::filesystem::path(scratch_dir("pipeline"));
        cfg = new ExperimentConfig(parse_ini(kSmallIni));
        ASSERT_EQ(run("gen-data", *cfg, *dir), kExitOk);
        ASSERT_EQ(run("train", *cfg, *dir), kExitOk);
        ASSERT_EQ(run("eval", *cfg, *dir), kExitOk);
    }
    static void TearDownTestSuite() {
        delete dir;
        delete cfg;
    }
    static std::filesystem::path* dir;
    static ExperimentConfig* cfg;
};

std::filesystem::path* Pipeline::dir = nullptr;
ExperimentConfig* Pipeline::cfg = nullptr;

TEST_F(Pipeline, TrainWritesArtifacts) {
    for (const char* f : {"final.ckpt", "best.ckpt", "steps.csv", "epochs.csv", "summary.json", "manifest_train.json"}) {
        EXPECT_TRUE(std::filesystem::exists(*dir / f)) << f;
    }
    EXPECT_NO_THROW(load_checkpoint((*dir / "best.ckpt").string()));
}

TEST_F(Pipeline, EvalTableIsFullCrossProduct) {
    std::istringstream csv(slurp(*dir / "results.csv"));
    std::string line;
    std::getline(csv, line);
    EXPECT_EQ(line, "method,rate,seed,acc_1,acc_2,acc_3,avg");
    std::map<std::string, std::size_t> rows;
    while (std::getline(csv, line)) {
        rows[line.substr(0, line.find(','))]++;
        if (line.rfind("none,", 0) == 0) {
            EXPECT_EQ(line.substr(line.rfind(',') + 1), "1");
        }
    }
    EXPECT_EQ(rows["none"], 2u);  // one rate-0 cell per seed
    EXPECT_EQ(rows["random"], 6u);
    EXPECT_EQ(rows["sample"], 6u);
    EXPECT_EQ(rows["meta"], 6u);
}

TEST_F(Pipeline, RerunsAreByteIdentical) {
    const auto again = scratch_dir("pipeline_again");
    ASSERT_EQ(run("gen-data", *cfg, again), kExitOk);
    ASSERT_EQ(run("train", *cfg, again), kExitOk);
    ASSERT_EQ(run("eval", *cfg, again), kExitOk);
    for (const char* f : {"final.ckpt", "best.ckpt", "steps.csv", "epochs.csv", "summary.json", "results.csv"}) {
        EXPECT_EQ(slurp(*dir / f), slurp(again / f)) << f;
    }
}

TEST_F(Pipeline, EvalNeedsCheckpointForMeta) {
    CommandOptions opts;
    opts.checkpoint = (*dir / "missing.ckpt").string();
    opts.out_dir = dir->string();
    std::ostringstream log, err;
    EXPECT_EQ(run_command("eval", *cfg, opts, log, err), kExitIo);
    EXPECT_NE(err.str().find("missing.ckpt"), std::string::npos);
}

TEST_F(Pipeline, FixedMatrixArtifacts) {
    CommandOptions opts;
    opts.episode = 3;
    ASSERT_EQ(run("fixed-matrix", *cfg, *dir, opts), kExitOk);
    std::istringstream csv(slurp(*dir / "loss_history.csv"));
    std::string line;
    std::size_t rows = 0;
    std::getline(csv, line);
    EXPECT_EQ(line, "epoch,l_pred,l_entropy,total");
    while (std::getline(csv, line)) {
        ++rows;
    }
    EXPECT_EQ(rows, 20u);
    const auto overlap = nlohmann::json::parse(slurp(*dir / "overlap.json"));
    EXPECT_DOUBLE_EQ(overlap.at("chance").get<double>(), 16.0 / 64.0);
    std::ifstream in(*dir / "fixed_matrix.vtcp", std::ios::binary);
    EXPECT_EQ(read_compression_matrix(in).m(), 16u);

    opts.episode = 40;
    EXPECT_EQ(run("fixed-matrix", *cfg, *dir, opts), kExitConfig);
}

TEST_F(Pipeline, FixedMatrixDefaultSchedule) {
    // Default 500 epochs; m = n is reachable exactly by the identity.
    auto full = parse_ini("seed = 5\n[dataset]\ntrain_count = 60\neval_count = 40\n[fixed_matrix]\nrate = 0\n");
    const auto out = scratch_dir("fixed_full");
    full.dataset.dir = dir->string();
    ASSERT_EQ(run("fixed-matrix", full, out), kExitOk);
    const auto summary = nlohmann::json::parse(slurp(out / "fixed_matrix.json"));
    EXPECT_EQ(summary.at("m"), 64u);
    EXPECT_LT(summary.at("final_l_pred").get<double>(), 1e-3);
    std::istringstream csv(slurp(out / "loss_history.csv"));
    std::string line;
    std::size_t rows = 0;
    while (std::getline(csv, line)) {
        ++rows;
    }
    EXPECT_EQ(rows, 501u);
}

TEST(Cost, SweepCalibrationAndBaseRow) {
    const auto cfg = parse_ini("[cost]\ncalibrate = true\nrates = 0, 0.5, 0.9\n");
    const auto dir = scratch_dir("cost");
    ASSERT_EQ(run("cost", cfg, dir), kExitOk);
    const auto cost = nlohmann::json::parse(slurp(dir / "cost.json"));
    const auto& rows = cost.at("rows");
    ASSERT_EQ(rows.size(), 3u);
    const auto base = estimate_cost(cfg.cost.dims, cfg.cost.n_visual, cfg.cost.n_text, cfg.cost.answer_len,
                                    cfg.cost.turns, 0.0);
    EXPECT_EQ(rows[0], cost_to_json(base));
    EXPECT_GT(rows[0].at("prefill_flops").get<std::uint64_t>(), rows[1].at("prefill_flops").get<std::uint64_t>());
    EXPECT_GT(rows[1].at("prefill_flops").get<std::uint64_t>(), rows[2].at("prefill_flops").get<std::uint64_t>());
    const auto cal = nlohmann::json::parse(slurp(dir / "calibration.json"));
    EXPECT_EQ(cal.at("published_tflops").at("base"), 71.4);
    EXPECT_EQ(cal.at("published_tflops").at("reduced_90"), 13.3);
}

TEST(RunCommand, UnknownCommand) {
    std::ostringstream log, err;
    EXPECT_EQ(run_command("plot", default_config(), {}, log, err), kExitConfig);
}

}  // namespace
}  // namespace vtc
