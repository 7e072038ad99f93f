// Copyright (C) 2026 The vtcompress Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtc/cli.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/json_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "vtc/rng.hpp"

namespace vtc {

namespace fs = std::filesystem;
using boost::property_tree::ptree;

namespace {

// ---- config parsing ----

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) {
        return "";
    }
    return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

/// One config section with unknown-key detection.
class Section {
public:
    Section(const ptree& root, std::string name) : m_name(std::move(name)) {
        if (auto child = root.get_child_optional(m_name)) {
            m_tree = *child;
        }
    }

    bool has(const std::string& key) const {
        m_seen.insert(key);
        return m_tree.get_child_optional(key).has_value();
    }

    std::string raw(const std::string& key) const {
        m_seen.insert(key);
        return trim(m_tree.get<std::string>(key));
    }

    template <typename T>
    void read(const std::string& key, T& out) const {
        if (!has(key)) {
            return;
        }
        out = convert<T>(key, raw(key));
    }

    template <typename T>
    void read_list(const std::string& key, std::vector<T>& out) const {
        if (!has(key)) {
            return;
        }
        std::vector<std::string> items;
        const ptree& node = m_tree.get_child(key);
        if (!node.empty()) {
            for (const auto& kv : node) {
                items.push_back(trim(kv.second.data()));
            }
        } else {
            std::stringstream ss(node.data());
            std::string item;
            while (std::getline(ss, item, ',')) {
                if (!trim(item).empty()) {
                    items.push_back(trim(item));
                }
            }
        }
        out.clear();
        for (const auto& item : items) {
            out.push_back(convert<T>(key, item));
        }
    }

    void reject_unknown() const {
        for (const auto& kv : m_tree) {
            if (!m_seen.count(kv.first)) {
                throw ConfigError("unknown key '" + kv.first + "' in [" + m_name + "]");
            }
        }
    }

private:
    template <typename T>
    T convert(const std::string& key, const std::string& text) const {
        const std::string where = "[" + m_name + "] " + key + " = '" + text + "'";
        if constexpr (std::is_same_v<T, std::string>) {
            return text;
        } else if constexpr (std::is_same_v<T, bool>) {
            if (text == "true" || text == "1" || text == "yes" || text == "on") {
                return true;
            }
            if (text == "false" || text == "0" || text == "no" || text == "off") {
                return false;
            }
            throw ConfigError(where + ": expected a boolean");
        } else {
            std::istringstream is(text);
            T value{};
            if (!text.empty() && text[0] == '-' && std::is_unsigned_v<T>) {
                throw ConfigError(where + ": expected a non-negative integer");
            }
            is >> value;
            if (is.fail() || !is.eof()) {
                throw ConfigError(where + ": not a valid number");
            }
            return value;
        }
    }

    std::string m_name;
    ptree m_tree;
    mutable std::set<std::string> m_seen;
};

const std::set<std::string> kSections = {"model", "dataset", "generator", "train",
                                         "eval",  "fixed_matrix", "cost", "output"};

void read_seed(const Section& s, const std::string& key, std::uint64_t base, const char* tag, std::uint64_t& out) {
    out = derive_seed(base, tag);
    s.read(key, out);
}

ExperimentConfig from_tree(const ptree& root, std::optional<std::uint64_t> seed_override) {
    ExperimentConfig cfg;
    for (const auto& kv : root) {
        if (kv.first == "seed") {
            continue;
        }
        if (!kSections.count(kv.first)) {
            throw ConfigError("unknown config section or key '" + kv.first + "'");
        }
        if (!trim(kv.second.data()).empty()) {
            throw ConfigError("'" + kv.first + "' must be a section, not a value");
        }
    }
    if (auto s = root.get_optional<std::string>("seed"); s && !trim(*s).empty()) {
        cfg.seed = std::stoull(trim(*s));
    }
    if (seed_override) {
        cfg.seed = *seed_override;
    }
    const std::uint64_t S = cfg.seed;

    Section model(root, "model");
    auto& m = cfg.model;
    model.read("n_classes", m.n_classes);
    model.read("n_heads", m.n_heads);
    model.read("pos_freqs", m.pos_freqs);
    model.read("phase_period", m.phase_period);
    model.read("n_max", m.n_max);
    model.read("pos_amplitude", m.pos_amplitude);
    model.read("attn_scale", m.attn_scale);
    model.read("slot_gain", m.slot_gain);
    model.read("shared_gain", m.shared_gain);
    model.read("slot_threshold", m.slot_threshold);
    model.read("temperature", m.temperature);
    model.read("weight_noise", m.weight_noise);
    read_seed(model, "seed", S, "model", cfg.model_seed);
    model.reject_unknown();

    Section data(root, "dataset");
    auto& d = cfg.dataset;
    data.read_list("n_tokens", d.n_tokens);
    data.read("turns", d.turns);
    data.read("train_count", d.train_count);
    data.read("eval_count", d.eval_count);
    data.read("coherence", d.coherence);
    data.read("dir", d.dir);
    read_seed(data, "train_seed", S, "dataset/train", d.train_seed);
    read_seed(data, "eval_seed", S, "dataset/eval", d.eval_seed);
    data.reject_unknown();

    Section gen(root, "generator");
    auto& g = cfg.generator;
    gen.read("d_c", g.d_c);
    gen.read("kernel", g.kernel);
    gen.read("n_max", g.n_max);
    if (gen.has("positional")) {
        try {
            g.positional = positional_mode_from_string(gen.raw("positional"));
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("[generator] positional: ") + e.what());
        }
    }
    read_seed(gen, "seed", S, "generator", g.seed);
    gen.reject_unknown();

    Section train(root, "train");
    auto& t = cfg.train;
    train.read("lr", t.lr);
    train.read("grad_clip_max", t.grad_clip_max);
    train.read("clip", t.clip);
    train.read("epochs", t.epochs);
    train.read("batch_size", t.batch_size);
    train.read("alpha_entropy", t.alpha_entropy);
    train.read("alpha_collapse", t.alpha_collapse);
    train.read("rate", t.rate);
    train.read("holdout_fraction", t.holdout_fraction);
    read_seed(train, "seed", S, "train", t.seed);
    train.reject_unknown();

    Section eval(root, "eval");
    auto& e = cfg.eval;
    eval.read_list("reducers", e.reducers);
    eval.read_list("rates", e.rates);
    e.seeds = {S};
    eval.read_list("seeds", e.seeds);
    eval.read("pool_kernel", e.pool_kernel);
    eval.read("checkpoint", e.checkpoint);
    eval.reject_unknown();

    Section fixed(root, "fixed_matrix");
    auto& f = cfg.fixed_matrix;
    fixed.read("alpha", f.optimizer.alpha);
    fixed.read("sigma_raw", f.optimizer.sigma_raw);
    fixed.read("lr", f.optimizer.lr);
    fixed.read("epochs", f.optimizer.epochs);
    fixed.read("rate", f.rate);
    fixed.read("episode", f.episode);
    read_seed(fixed, "seed", S, "fixed_matrix", f.seed);
    fixed.reject_unknown();

    Section cost(root, "cost");
    auto& c = cfg.cost;
    cost.read("layers", c.dims.layers);
    cost.read("d_model", c.dims.d_model);
    cost.read("n_heads", c.dims.n_heads);
    cost.read("ffn_width", c.dims.ffn_width);
    cost.read("vocab", c.dims.vocab);
    cost.read("bytes_per_element", c.dims.bytes_per_element);
    cost.read("n_visual", c.n_visual);
    cost.read("n_text", c.n_text);
    cost.read("answer_len", c.answer_len);
    cost.read("turns", c.turns);
    cost.read_list("rates", c.rates);
    cost.read("calibrate", c.calibrate);
    cost.read("runtime", c.runtime);
    cost.read("runtime_tokens", c.runtime_tokens);
    cost.read("runtime_rate", c.runtime_rate);
    cost.read("runtime_repeats", c.runtime_repeats);
    read_seed(cost, "runtime_seed", S, "cost/runtime", c.runtime_seed);
    cost.reject_unknown();

    Section output(root, "output");
    output.read("dir", cfg.out_dir);
    output.reject_unknown();
    return cfg;
}

void validate_config(const ExperimentConfig& cfg) {
    try {
        cfg.model.validate();
        DatasetConfig dc;
        dc.n_tokens = cfg.dataset.n_tokens;
        dc.n_turns = cfg.dataset.turns;
        dc.n_classes = cfg.model.n_classes;
        dc.coherence = cfg.dataset.coherence;
        dc.validate();
        for (std::size_t n : cfg.dataset.n_tokens) {
            if (n > cfg.model.n_max || n > cfg.generator.n_max) {
                throw ConfigError("[dataset] n_tokens entry " + std::to_string(n) + " exceeds model/generator n_max");
            }
        }
        cfg.train.validate();
        cfg.fixed_matrix.optimizer.validate();
        if (!(cfg.fixed_matrix.rate >= 0.0 && cfg.fixed_matrix.rate < 1.0)) {
            throw ConfigError("[fixed_matrix] rate must lie in [0, 1)");
        }
        if (cfg.eval.reducers.empty() || cfg.eval.rates.empty() || cfg.eval.seeds.empty()) {
            throw ConfigError("[eval] reducers, rates and seeds must be non-empty");
        }
        for (const auto& r : cfg.eval.reducers) {
            reducer_kind_from_string(r);
        }
        for (double r : cfg.eval.rates) {
            ReducerSpec{ReducerKind::Sample, r, 0, 0}.validate();
        }
        cfg.cost.dims.validate();
        if (cfg.cost.n_visual == 0) {
            throw ConfigError("[cost] n_visual must be positive");
        }
        for (double r : cfg.cost.rates) {
            if (!(r >= 0.0 && r < 1.0)) {
                throw ConfigError("[cost] rates must lie in [0, 1)");
            }
        }
        if (cfg.cost.runtime && cfg.cost.runtime_repeats < 3) {
            throw ConfigError("[cost] runtime_repeats must be at least 3");
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

// ---- output helpers ----

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string join(const fs::path& dir, const std::string& file) {
    return (dir / file).string();
}

fs::path prepare_out(const ExperimentConfig& cfg, const CommandOptions& opts) {
    const fs::path dir = opts.out_dir.empty() ? fs::path(cfg.out_dir) : fs::path(opts.out_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
    }
    return dir;
}

fs::path data_dir(const ExperimentConfig& cfg, const fs::path& out) {
    return cfg.dataset.dir.empty() ? out : fs::path(cfg.dataset.dir);
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open for writing: " + path);
    }
    out << text;
    if (!out) {
        throw IoError("failed writing " + path);
    }
}

void write_json(const std::string& path, const nlohmann::json& j) {
    write_text(path, j.dump(2) + "\n");
}

void write_manifest(const fs::path& dir, const std::string& command, const ExperimentConfig& cfg,
                    const std::vector<std::string>& outputs) {
    write_json(join(dir, "manifest_" + command + ".json"),
               {{"command", command},
                {"engine_version", kEngineVersion},
                {"config_hash", config_hash(cfg)},
                {"seed", cfg.seed},
                {"config", config_to_json(cfg)},
                {"outputs", outputs}});
}

std::vector<DialogueEpisode> load_split(const fs::path& dir, const std::string& split, const FrozenModel& model) {
    const std::string path = join(dir, split + ".vtce");
    if (!fs::exists(path)) {
        throw IoError("dataset not found: expected " + path + " (run gen-data first)");
    }
    auto episodes = load_episodes(path);
    for (const auto& ep : episodes) {
        if (ep.image_tokens.cols() != model.spec().image_width() || ep.classes.empty()) {
            throw ConfigError("dataset " + path + " does not match the configured model (image width " +
                              std::to_string(ep.image_tokens.cols()) + ", expected " +
                              std::to_string(model.spec().image_width()) + ")");
        }
        for (std::size_t c : ep.classes) {
            if (c >= model.spec().n_classes) {
                throw ConfigError("dataset " + path + " uses more classes than the configured model");
            }
        }
    }
    return episodes;
}

// Shortest form that still round-trips.
std::string fmt(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

DatasetConfig split_config(const ExperimentConfig& cfg, bool train) {
    DatasetConfig dc;
    dc.n_tokens = cfg.dataset.n_tokens;
    dc.n_turns = cfg.dataset.turns;
    dc.n_classes = cfg.model.n_classes;
    dc.coherence = cfg.dataset.coherence;
    dc.count = train ? cfg.dataset.train_count : cfg.dataset.eval_count;
    dc.seed = train ? cfg.dataset.train_seed : cfg.dataset.eval_seed;
    return dc;
}

}  // namespace

ExperimentConfig parse_config(std::istream& in, bool json, std::optional<std::uint64_t> seed_override) {
    ptree root;
    try {
        if (json) {
            boost::property_tree::read_json(in, root);
        } else {
            boost::property_tree::read_ini(in, root);
        }
    } catch (const boost::property_tree::ptree_error& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    ExperimentConfig cfg;
    try {
        cfg = from_tree(root, seed_override);
    } catch (const boost::property_tree::ptree_error& e) {
        throw ConfigError(std::string("config error: ") + e.what());
    } catch (const std::logic_error& e) {
        // std::stoull and friends
        throw ConfigError(std::string("config error: ") + e.what());
    }
    validate_config(cfg);
    return cfg;
}

ExperimentConfig load_config(const std::string& path, std::optional<std::uint64_t> seed_override) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open config " + path);
    }
    return parse_config(in, fs::path(path).extension() == ".json", seed_override);
}

ExperimentConfig default_config(std::uint64_t seed) {
    std::istringstream empty;
    return parse_config(empty, false, seed);
}

nlohmann::json config_to_json(const ExperimentConfig& cfg) {
    const auto& c = cfg.cost;
    nlohmann::json dataset = {{"n_tokens", cfg.dataset.n_tokens},     {"turns", cfg.dataset.turns},
                              {"train_count", cfg.dataset.train_count}, {"eval_count", cfg.dataset.eval_count},
                              {"coherence", cfg.dataset.coherence},   {"train_seed", cfg.dataset.train_seed},
                              {"eval_seed", cfg.dataset.eval_seed},   {"dir", cfg.dataset.dir}};
    nlohmann::json generator = {{"d_c", cfg.generator.d_c},
                                {"kernel", cfg.generator.kernel},
                                {"n_max", cfg.generator.n_max},
                                {"positional", to_string(cfg.generator.positional)},
                                {"seed", cfg.generator.seed}};
    nlohmann::json eval = {{"reducers", cfg.eval.reducers}, {"rates", cfg.eval.rates},
                           {"seeds", cfg.eval.seeds},       {"pool_kernel", cfg.eval.pool_kernel},
                           {"checkpoint", cfg.eval.checkpoint}};
    const auto& f = cfg.fixed_matrix;
    nlohmann::json fixed = {{"alpha", f.optimizer.alpha}, {"sigma_raw", f.optimizer.sigma_raw},
                            {"lr", f.optimizer.lr},       {"epochs", f.optimizer.epochs},
                            {"rate", f.rate},             {"episode", f.episode},
                            {"seed", f.seed}};
    nlohmann::json cost = {{"dims", dims_to_json(c.dims)},    {"n_visual", c.n_visual},
                           {"n_text", c.n_text},              {"answer_len", c.answer_len},
                           {"turns", c.turns},                {"rates", c.rates},
                           {"calibrate", c.calibrate},        {"runtime", c.runtime},
                           {"runtime_tokens", c.runtime_tokens}, {"runtime_rate", c.runtime_rate},
                           {"runtime_repeats", c.runtime_repeats}, {"runtime_seed", c.runtime_seed}};
    nlohmann::json model = spec_to_json(cfg.model);
    model["seed"] = cfg.model_seed;
    return {{"seed", cfg.seed},
            {"model", model},
            {"dataset", dataset},
            {"generator", generator},
            {"train", train_config_to_json(cfg.train)},
            {"eval", eval},
            {"fixed_matrix", fixed},
            {"cost", cost},
            {"output", {{"dir", cfg.out_dir}}}};
}

std::string config_hash(const ExperimentConfig& cfg) {
    nlohmann::json j = config_to_json(cfg);
    // Where files land does not change what is computed.
    j.erase("output");
    j["dataset"].erase("dir");
    return hex64(fnv1a64(j.dump()));
}

void write_eval_csv_header(std::ostream& out, std::size_t turns) {
    out << "method,rate,seed";
    for (std::size_t t = 1; t <= turns; ++t) {
        out << ",acc_" << t;
    }
    out << ",avg\n";
}

int cmd_gen_data(const ExperimentConfig& cfg, const CommandOptions& opts, std::ostream& log) {
    const fs::path out = prepare_out(cfg, opts);
    const fs::path dir = data_dir(cfg, out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());
    }
    const PatchEncoder encoder(cfg.model);
    std::vector<std::string> outputs;
    for (bool train : {true, false}) {
        const std::string split = train ? "train" : "eval";
        const DatasetConfig dc = split_config(cfg, train);
        const auto episodes = gen_episodes(encoder, dc);
        const std::string path = join(dir, split + ".vtce");
        try {
            save_episodes(path, dc, cfg.model.image_width(), episodes);
        } catch (const std::runtime_error& e) {
            throw IoError(e.what());
        }
        write_json(join(dir, split + ".manifest.json"), episodes_manifest(dc, episodes));
        outputs.push_back(path);
        outputs.push_back(join(dir, split + ".manifest.json"));
        log << "gen-data: wrote " << episodes.size() << " " << split << " episodes to " << path << "\n";
    }
    write_manifest(out, "gen-data", cfg, outputs);
    return kExitOk;
}

int cmd_train(const ExperimentConfig& cfg, const CommandOptions& opts, std::ostream& log) {
    const fs::path out = prepare_out(cfg, opts);
    const FrozenModel model = build_patch_recall_model(cfg.model, cfg.model_seed);
    const auto episodes = load_split(data_dir(cfg, out), "train", model);
    if (episodes.empty()) {
        throw ConfigError("training set is empty");
    }
    const std::size_t d = model.spec().image_width();
    const std::size_t d_c = cfg.generator.d_c ? cfg.generator.d_c : default_compressed_width(d);
    const MetaGeneratorParams init =
        init_params(d, d_c, cfg.generator.n_max, cfg.generator.kernel, cfg.generator.seed, cfg.generator.positional);

    log << "train: " << episodes.size() << " episodes, " << count_params(init) << " generator params\n";
    const TrainResult result = train_meta(init, model, episodes, cfg.train);

    const std::vector<std::string> outputs = {join(out, "final.ckpt"), join(out, "best.ckpt"), join(out, "steps.csv"),
                                              join(out, "epochs.csv"), join(out, "summary.json")};
    try {
        save_checkpoint(outputs[0], result.final_params);
        save_checkpoint(outputs[1], result.best_params);
    } catch (const std::runtime_error& e) {
        throw IoError(e.what());
    }
    {
        std::ostringstream csv;
        write_step_csv(csv, result.metrics.steps);
        write_text(outputs[2], csv.str());
    }
    {
        std::ostringstream csv;
        csv << "epoch";
        for (std::size_t t = 1; t <= cfg.dataset.turns; ++t) {
            csv << ",acc_" << t;
        }
        csv << ",avg\n";
        for (const auto& e : result.metrics.epochs) {
            csv << e.epoch;
            for (double a : e.holdout.per_turn) {
                csv << "," << fmt(a);
            }
            csv << "," << fmt(e.holdout.mean) << "\n";
        }
        write_text(outputs[3], csv.str());
    }
    nlohmann::json summary = train_summary(cfg.train, result);
    summary["config_hash"] = config_hash(cfg);
    summary["engine_version"] = kEngineVersion;
    summary["generator"] = checkpoint_manifest(init);
    write_json(outputs[4], summary);
    write_manifest(out, "train", cfg, outputs);

    if (result.divergence) {
        log << "train: diverged at step " << result.divergence->step << ": " << result.divergence->message << "\n";
        return kExitDivergence;
    }
    log << "train: best epoch " << result.metrics.best_epoch << " holdout avg " << fmt(result.metrics.best_accuracy)
        << "\n";
    return kExitOk;
}

int cmd_eval(const ExperimentConfig& cfg, const CommandOptions& opts, std::ostream& log) {
    const fs::path out = prepare_out(cfg, opts);
    const FrozenModel model = build_patch_recall_model(cfg.model, cfg.model_seed);
    const auto episodes = load_split(data_dir(cfg, out), "eval", model);

    std::optional<MetaGeneratorParams> meta;
    for (const auto& name : cfg.eval.reducers) {
        if (reducer_kind_from_string(name) != ReducerKind::Meta || meta) {
            continue;
        }
        const std::string path = opts.checkpoint    ? *opts.checkpoint
                                 : !cfg.eval.checkpoint.empty() ? cfg.eval.checkpoint
                                                                : join(out, "best.ckpt");
        if (!fs::exists(path)) {
            throw IoError("meta reducer needs a checkpoint; not found: " + path);
        }
        try {
            meta = load_checkpoint(path);
        } catch (const std::runtime_error& e) {
            throw IoError(e.what());
        }
        if (meta->d != model.spec().image_width()) {
            throw ConfigError("checkpoint " + path + " has width " + std::to_string(meta->d) +
                              ", the model expects " + std::to_string(model.spec().image_width()));
        }
    }

    std::ostringstream csv;
    write_eval_csv_header(csv, cfg.dataset.turns);
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& name : cfg.eval.reducers) {
        const ReducerKind kind = reducer_kind_from_string(name);
        // The identity reducer ignores the rate; it gets a single rate-0 cell.
        const std::vector<double> rates = kind == ReducerKind::Identity ? std::vector<double>{0.0} : cfg.eval.rates;
        for (double rate : rates) {
            for (std::uint64_t seed : cfg.eval.seeds) {
                const ReducerSpec spec{kind, rate, seed, cfg.eval.pool_kernel};
                const auto reducer = make_reducer(spec, meta ? &*meta : nullptr);
                const EvalResult r = evaluate(model, episodes, reducer.get());
                csv << name << "," << fmt(rate) << "," << seed;
                for (double a : r.per_turn) {
                    csv << "," << fmt(a);
                }
                csv << "," << fmt(r.mean) << "\n";
                rows.push_back({{"method", name}, {"rate", rate}, {"seed", seed}, {"per_turn", r.per_turn},
                                {"avg", r.mean}, {"episodes", r.episodes}});
                log << "eval: " << name << " rate=" << rate << " seed=" << seed << " avg=" << r.mean << "\n";
            }
        }
    }
    const std::vector<std::string> outputs = {join(out, "results.csv"), join(out, "results.json")};
    write_text(outputs[0], csv.str());
    write_json(outputs[1], {{"config_hash", config_hash(cfg)}, {"rows", rows}});
    write_manifest(out, "eval", cfg, outputs);
    return kExitOk;
}

int cmd_fixed_matrix(const ExperimentConfig& cfg, const CommandOptions& opts, std::ostream& log) {
    const fs::path out = prepare_out(cfg, opts);
    const FrozenModel model = build_patch_recall_model(cfg.model, cfg.model_seed);
    const auto episodes = load_split(data_dir(cfg, out), "eval", model);
    const std::size_t index = opts.episode.value_or(cfg.fixed_matrix.episode);
    if (index >= episodes.size()) {
        throw ConfigError("episode index " + std::to_string(index) + " out of range (eval set has " +
                          std::to_string(episodes.size()) + " episodes)");
    }
    const DialogueEpisode& ep = episodes[index];
    const std::size_t m = compressed_length(ep.n(), cfg.fixed_matrix.rate);
    const FixedMatrixResult result =
        train_fixed_matrix(ep.image_tokens, make_trace_objective(model, ep), cfg.fixed_matrix.optimizer, m,
                           cfg.fixed_matrix.seed);

    const auto scores = prompt_attention(model, ep.image_tokens, turn_prompt(model, ep.turns.at(0)));
    const OverlapReport overlap = retained_token_analysis(result.P, scores);

    const std::vector<std::string> outputs = {join(out, "fixed_matrix.vtcp"), join(out, "loss_history.csv"),
                                              join(out, "overlap.json"), join(out, "fixed_matrix.json")};
    {
        std::ostringstream bin;
        write_compression_matrix(bin, result.P);
        write_text(outputs[0], bin.str());
    }
    std::ostringstream csv;
    csv << "epoch,l_pred,l_entropy,total\n";
    for (std::size_t k = 0; k < result.history.size(); ++k) {
        const auto& h = result.history[k];
        csv << k << "," << fmt(h.l_pred) << "," << fmt(h.l_entropy) << "," << fmt(h.total) << "\n";
    }
    write_text(outputs[1], csv.str());
    write_json(outputs[2], overlap_to_json(overlap));
    write_json(outputs[3], {{"episode", index},
                            {"episode_id", ep.id},
                            {"n", ep.n()},
                            {"m", m},
                            {"initial_l_pred", result.history.empty() ? 0.0 : result.history.front().l_pred},
                            {"final_l_pred", result.final.l_pred},
                            {"final_l_entropy", result.final.l_entropy},
                            {"final_total", result.final.total}});
    write_manifest(out, "fixed-matrix", cfg, outputs);
    log << "fixed-matrix: episode " << index << " n=" << ep.n() << " m=" << m << " L_pred "
        << (result.history.empty() ? 0.0 : result.history.front().l_pred) << " -> " << result.final.l_pred
        << ", overlap " << overlap.overlap_fraction << " (chance " << overlap.chance << ")\n";
    return kExitOk;
}

int cmd_cost(const ExperimentConfig& cfg, const CommandOptions& opts, std::ostream& log) {
    const fs::path out = prepare_out(cfg, opts);
    const auto& c = cfg.cost;
    std::ostringstream csv;
    write_cost_csv_header(csv);
    nlohmann::json rows = nlohmann::json::array();
    for (double rate : c.rates) {
        const CostReport r = estimate_cost(c.dims, c.n_visual, c.n_text, c.answer_len, c.turns, rate);
        write_cost_csv_row(csv, r);
        rows.push_back(cost_to_json(r));
    }
    std::vector<std::string> outputs = {join(out, "cost.csv"), join(out, "cost.json")};
    write_text(outputs[0], csv.str());
    write_json(outputs[1], {{"flop_convention", kFlopConvention}, {"dims", dims_to_json(c.dims)}, {"rows", rows}});
    log << "cost: " << c.rates.size() << " rates written to " << outputs[0] << "\n";

    if (c.calibrate) {
        const ModelDims dims = llama_7b_dims();
        const CostReport base = estimate_cost(dims, 576, c.n_text, c.answer_len, c.turns, 0.0);
        const CostReport reduced = estimate_cost(dims, 576, c.n_text, c.answer_len, c.turns, 0.9);
        const nlohmann::json cal = {
            {"dims", dims_to_json(dims)},
            {"note", "published figures are shown for manual comparison only"},
            {"published_tflops", {{"base", 71.4}, {"reduced_90", 13.3}}},
            {"computed_prefill_tflops", {{"base", base.prefill_flops * 1e-12}, {"reduced_90", reduced.prefill_flops * 1e-12}}},
            {"computed_total_tflops", {{"base", base.total_flops * 1e-12}, {"reduced_90", reduced.total_flops * 1e-12}}},
        };
        outputs.push_back(join(out, "calibration.json"));
        write_json(outputs.back(), cal);
        char line[256];
        std::snprintf(line, sizeof line,
                      "cost: 7B calibration  prefill %.2f / %.2f TFLOPs, dialogue %.2f / %.2f TFLOPs "
                      "(published 71.4 / 13.3)\n",
                      base.prefill_flops * 1e-12, reduced.prefill_flops * 1e-12, base.total_flops * 1e-12,
                      reduced.total_flops * 1e-12);
        log << line;
    }

    if (c.runtime) {
        FrozenModelSpec spec = cfg.model;
        spec.n_max = std::max(spec.n_max, c.runtime_tokens);
        const FrozenModel model = build_patch_recall_model(spec, cfg.model_seed);
        DatasetConfig dc;
        dc.n_tokens = {c.runtime_tokens};
        dc.n_turns = cfg.dataset.turns;
        dc.n_classes = spec.n_classes;
        dc.coherence = cfg.dataset.coherence;
        dc.count = 1;
        dc.seed = c.runtime_seed;
        const auto episodes = gen_episodes(model.encoder(), dc);
        const SampleReducer reducer(c.runtime_rate);
        const RuntimeComparison cmp = measure_toy_runtime(model, episodes.front(), reducer, c.runtime_repeats);
        outputs.push_back(join(out, "runtime.json"));
        write_json(outputs.back(), runtime_to_json(cmp));
        log << "cost: toy runtime median " << cmp.base.median << " s (none) vs " << cmp.reduced.median << " s ("
            << cmp.reduced.name << ")\n";
    }
    write_manifest(out, "cost", cfg, outputs);
    return kExitOk;
}

int run_command(const std::string& command, const ExperimentConfig& cfg, const CommandOptions& opts,
                std::ostream& log, std::ostream& err) {
    try {
        if (command == "gen-data") {
            return cmd_gen_data(cfg, opts, log);
        }
        if (command == "train") {
            return cmd_train(cfg, opts, log);
        }
        if (command == "eval") {
            return cmd_eval(cfg, opts, log);
        }
        if (command == "fixed-matrix") {
            return cmd_fixed_matrix(cfg, opts, log);
        }
        if (command == "cost") {
            return cmd_cost(cfg, opts, log);
        }
        err << "error: unknown command '" << command << "'\n";
        return kExitConfig;
    } catch (const DivergenceError& e) {
        err << "error: " << command << ": " << e.what() << "\n";
        return kExitDivergence;
    } catch (const NumericalError& e) {
        err << "error: " << command << ": numerical divergence: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const std::invalid_argument& e) {
        err << "error: " << command << ": " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        err << "error: " << command << ": " << e.what() << "\n";
        return kExitIo;
    }
}

}  // namespace vtc
