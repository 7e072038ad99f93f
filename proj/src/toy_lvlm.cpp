// Copyright (C) 2026 The vtcompress Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtc/toy_lvlm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include <boost/math/distributions/normal.hpp>

#include "vtc/rng.hpp"

namespace vtc {

void FrozenModelSpec::validate() const {
    if (n_classes < 2) {
        throw std::invalid_argument("model spec: need at least 2 classes, got " + std::to_string(n_classes));
    }
    if (n_heads == 0 || pos_freqs == 0 || phase_period == 0 || n_max == 0) {
        throw std::invalid_argument("model spec: n_heads, pos_freqs, phase_period and n_max must be positive");
    }
    if (!(pos_amplitude > 0.0) || !(attn_scale > 0.0) || !(temperature > 0.0) || !(slot_gain > 0.0) ||
        !(shared_gain >= 0.0) || !(weight_noise >= 0.0) || !(slot_threshold >= 0.0)) {
        throw std::invalid_argument("model spec: gains, amplitude and temperature must be positive");
    }
}

nlohmann::json spec_to_json(const FrozenModelSpec& s) {
    return {{"n_classes", s.n_classes},       {"n_heads", s.n_heads},         {"pos_freqs", s.pos_freqs},
            {"phase_period", s.phase_period}, {"n_max", s.n_max},             {"pos_amplitude", s.pos_amplitude},
            {"attn_scale", s.attn_scale},     {"slot_gain", s.slot_gain},     {"shared_gain", s.shared_gain}, {"slot_threshold", s.slot_threshold},
            {"temperature", s.temperature},   {"weight_noise", s.weight_noise}, {"image_width", s.image_width()},
            {"model_width", s.model_width()}};
}

namespace {

// Offsets into model space.
struct Layout {
    std::size_t code, phase, slots, shared, q_code, q_phase, is_sep, is_query, answer, width;

    explicit Layout(const FrozenModelSpec& s) {
        const std::size_t p = s.code_width(), G = s.phase_period, C = s.n_classes;
        code = 0;
        phase = p;
        slots = p + G;
        shared = slots + G * C;
        q_code = shared + C;
        q_phase = q_code + p;
        is_sep = q_phase + G;
        is_query = is_sep + 1;
        answer = is_query + 1;
        width = answer + C;
    }
};

}  // namespace

PatchEncoder::PatchEncoder(FrozenModelSpec spec) : m_spec(std::move(spec)) {
    m_spec.validate();
    // Frequencies at half-normal quantiles: the code kernel then falls off
    // like a Gaussian in the position gap with small sidelobes.
    const boost::math::normal_distribution<double> unit;
    const double F = static_cast<double>(m_spec.pos_freqs);
    m_freqs.resize(m_spec.pos_freqs);
    for (std::size_t k = 0; k < m_spec.pos_freqs; ++k) {
        const double u = 0.5 + 0.5 * (static_cast<double>(k) + 0.5) / F;
        m_freqs[k] = 0.6 * boost::math::quantile(unit, u);
    }
}

std::vector<double> PatchEncoder::position_code(std::size_t j) const {
    const double norm = 1.0 / std::sqrt(static_cast<double>(m_spec.pos_freqs));
    std::vector<double> code(m_spec.code_width());
    for (std::size_t k = 0; k < m_freqs.size(); ++k) {
        const double angle = m_freqs[k] * static_cast<double>(j);
        code[2 * k] = std::cos(angle) * norm;
        code[2 * k + 1] = std::sin(angle) * norm;
    }
    return code;
}

Tensor PatchEncoder::encode(std::span<const std::size_t> classes) const {
    const Layout L(m_spec);
    const std::size_t n = classes.size(), G = m_spec.phase_period, C = m_spec.n_classes;
    if (n > m_spec.n_max) {
        throw std::invalid_argument("PatchEncoder: " + std::to_string(n) + " patches exceed n_max=" +
                                    std::to_string(m_spec.n_max));
    }
    Tensor X = Tensor::matrix(n, m_spec.image_width());
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t c = classes[j];
        if (c >= C) {
            throw std::invalid_argument("PatchEncoder: class " + std::to_string(c) + " out of range");
        }
        const auto code = position_code(j);
        for (std::size_t i = 0; i < code.size(); ++i) {
            X(j, L.code + i) = m_spec.pos_amplitude * code[i];
        }
        const std::size_t g = j % G;
        X(j, L.phase + g) = 1.0;
        X(j, L.slots + g * C + c) = 1.0;
        X(j, L.shared + c) = 1.0;
    }
    return X;
}

void DatasetConfig::validate() const {
    if (n_tokens.empty()) {
        throw std::invalid_argument("dataset: n_tokens is empty");
    }
    if (n_turns == 0) {
        throw std::invalid_argument("dataset: n_turns must be at least 1");
    }
    for (std::size_t n : n_tokens) {
        if (n_turns > n) {
            throw std::invalid_argument("dataset: n_turns=" + std::to_string(n_turns) + " exceeds n_tokens=" +
                                        std::to_string(n));
        }
    }
    if (n_classes < 2) {
        throw std::invalid_argument("dataset: need at least 2 classes");
    }
    if (!(coherence >= 0.0 && coherence <= 1.0)) {
        throw std::invalid_argument("dataset: coherence must lie in [0, 1]");
    }
}

std::vector<DialogueEpisode> gen_episodes(const PatchEncoder& encoder, const DatasetConfig& cfg) {
    cfg.validate();
    if (cfg.n_classes != encoder.spec().n_classes) {
        throw std::invalid_argument("dataset: C=" + std::to_string(cfg.n_classes) + " but the model has C=" +
                                    std::to_string(encoder.spec().n_classes));
    }
    Rng rng(cfg.seed);
    std::vector<DialogueEpisode> out;
    out.reserve(cfg.count);
    for (std::size_t e = 0; e < cfg.count; ++e) {
        DialogueEpisode ep;
        ep.id = e;
        const std::size_t n = cfg.n_tokens.size() == 1 ? cfg.n_tokens[0] : cfg.n_tokens[rng.index(cfg.n_tokens.size())];
        ep.classes.resize(n);
        ep.classes[0] = rng.index(cfg.n_classes);
        for (std::size_t j = 1; j < n; ++j) {
            const double u = rng.uniform();
            ep.classes[j] = u < cfg.coherence ? ep.classes[j - 1] : rng.index(cfg.n_classes);
        }
        for (std::size_t q : rng.sample_without_replacement(n, cfg.n_turns)) {
            ep.turns.push_back(Turn{q, ep.classes[q]});
        }
        ep.image_tokens = encoder.encode(ep.classes);
        out.push_back(std::move(ep));
    }
    return out;
}

void write_episodes(std::ostream& out, const DatasetConfig& cfg, std::size_t image_width,
                    const std::vector<DialogueEpisode>& episodes) {
    io::write_magic(out, "VTCE");
    io::write_u32(out, kEpisodeFileVersion);
    io::write_u64(out, cfg.n_tokens.size() == 1 ? cfg.n_tokens[0] : 0);
    io::write_u64(out, cfg.n_turns);
    io::write_u64(out, cfg.n_classes);
    io::write_u64(out, episodes.size());
    io::write_u64(out, cfg.seed);
    io::write_u64(out, image_width);
    for (const auto& ep : episodes) {
        io::write_u64(out, ep.id);
        io::write_u64(out, ep.n());
        for (std::size_t c : ep.classes) {
            io::write_u64(out, c);
        }
        io::write_u64(out, ep.turns.size());
        for (const Turn& t : ep.turns) {
            io::write_u64(out, t.query);
            io::write_u64(out, t.gold);
        }
        write_tensor(out, ep.image_tokens);
    }
}

std::vector<DialogueEpisode> read_episodes(std::istream& in) {
    io::expect_magic(in, "VTCE");
    const std::uint32_t version = io::read_u32(in);
    if (version != kEpisodeFileVersion) {
        throw std::runtime_error("episode file version " + std::to_string(version) + " is not supported");
    }
    io::read_u64(in);  // n_tokens
    io::read_u64(in);  // n_turns
    const std::uint64_t C = io::read_u64(in);
    const std::uint64_t count = io::read_u64(in);
    io::read_u64(in);  // seed
    const std::uint64_t width = io::read_u64(in);
    std::vector<DialogueEpisode> out;
    out.reserve(count);
    for (std::uint64_t e = 0; e < count; ++e) {
        DialogueEpisode ep;
        ep.id = io::read_u64(in);
        const std::uint64_t n = io::read_u64(in);
        ep.classes.resize(n);
        for (auto& c : ep.classes) {
            c = io::read_u64(in);
            if (c >= C) {
                throw std::runtime_error("episode file: class label out of range");
            }
        }
        const std::uint64_t turns = io::read_u64(in);
        for (std::uint64_t t = 0; t < turns; ++t) {
            Turn turn;
            turn.query = io::read_u64(in);
            turn.gold = io::read_u64(in);
            if (turn.query >= n || ep.classes[turn.query] != turn.gold) {
                throw std::runtime_error("episode file: turn " + std::to_string(t) + " of episode " +
                                         std::to_string(ep.id) + " is inconsistent");
            }
            ep.turns.push_back(turn);
        }
        ep.image_tokens = read_tensor(in);
        if (ep.image_tokens.rank() != 2 || ep.image_tokens.rows() != n || ep.image_tokens.cols() != width) {
            throw std::runtime_error("episode file: token matrix of episode " + std::to_string(ep.id) +
                                     " has shape " + shape_string(ep.image_tokens.shape()));
        }
        out.push_back(std::move(ep));
    }
    return out;
}

void save_episodes(const std::string& path, const DatasetConfig& cfg, std::size_t image_width,
                   const std::vector<DialogueEpisode>& episodes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot open episode file for writing: " + path);
    }
    write_episodes(out, cfg, image_width, episodes);
    if (!out) {
        throw std::runtime_error("failed writing episode file: " + path);
    }
}

std::vector<DialogueEpisode> load_episodes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open episode file: " + path);
    }
    return read_episodes(in);
}

nlohmann::json episodes_manifest(const DatasetConfig& cfg, const std::vector<DialogueEpisode>& episodes) {
    std::map<std::size_t, std::size_t> histogram;
    for (const auto& ep : episodes) {
        ++histogram[ep.n()];
    }
    nlohmann::json hist = nlohmann::json::object();
    for (const auto& [n, k] : histogram) {
        hist[std::to_string(n)] = k;
    }
    return {{"format", "VTCE"},
            {"version", kEpisodeFileVersion},
            {"n_tokens", cfg.n_tokens},
            {"n_turns", cfg.n_turns},
            {"n_classes", cfg.n_classes},
            {"count", episodes.size()},
            {"seed", cfg.seed},
            {"coherence", cfg.coherence},
            {"n_histogram", hist}};
}

KVCache::KVCache(std::size_t layers, std::size_t key_width, std::size_t value_width)
    : m_layers(layers),
      m_key_width(key_width),
      m_value_width(value_width) {
    if (layers == 0) {
        throw std::invalid_argument("KVCache: need at least one layer");
    }
}

void KVCache::append(std::size_t layer, std::span<const double> key, std::span<const double> value) {
    if (key.size() != m_key_width || value.size() != m_value_width) {
        throw std::invalid_argument("KVCache::append: width mismatch");
    }
    Layer& l = m_layers.at(layer);
    if (l.keys.size() != m_length * m_key_width) {
        throw std::logic_error("KVCache::append: layer already holds the pending position");
    }
    l.keys.insert(l.keys.end(), key.begin(), key.end());
    l.values.insert(l.values.end(), value.begin(), value.end());
}

void KVCache::commit() {
    for (const Layer& l : m_layers) {
        if (l.keys.size() != (m_length + 1) * m_key_width) {
            throw std::logic_error("KVCache::commit: layers disagree on length");
        }
    }
    ++m_length;
}

FrozenModel::FrozenModel(FrozenModelSpec spec)
    : m_spec(spec),
      m_encoder(spec) {}

std::size_t FrozenModel::position_token(std::size_t q) const {
    if (q >= m_spec.n_max) {
        throw std::invalid_argument("position prompt " + std::to_string(q) + " exceeds n_max");
    }
    return m_spec.n_classes + 1 + q;
}

std::size_t FrozenModel::answer_token(std::size_t c) const {
    if (c >= m_spec.n_classes) {
        throw std::invalid_argument("answer class " + std::to_string(c) + " out of range");
    }
    return c;
}

Tensor FrozenModel::embed(std::span<const std::size_t> token_ids) const {
    Tensor out = Tensor::matrix(token_ids.size(), width());
    for (std::size_t i = 0; i < token_ids.size(); ++i) {
        if (token_ids[i] >= m_embed.rows()) {
            throw std::invalid_argument("token id " + std::to_string(token_ids[i]) + " outside the vocabulary");
        }
        const auto src = m_embed.row(token_ids[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

Tensor FrozenModel::project_image(const Tensor& image_tokens) const {
    if (image_tokens.rank() != 2 || image_tokens.cols() != m_spec.image_width()) {
        throw std::invalid_argument("project_image: expected width " + std::to_string(m_spec.image_width()) +
                                    ", got " + shape_string(image_tokens.shape()));
    }
    Tensor out = Tensor::matrix(image_tokens.rows(), width());
    for (std::size_t i = 0; i < image_tokens.rows(); ++i) {
        const auto src = image_tokens.row(i);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

std::uint64_t FrozenModel::fingerprint() const {
    std::string bytes;
    for (const Tensor* t : {&m_wq, &m_wk, &m_wv, &m_wo, &m_a, &m_b, &m_bias, &m_u, &m_embed}) {
        bytes.append(reinterpret_cast<const char*>(t->data().data()), t->size() * sizeof(double));
    }
    return fnv1a64(bytes);
}

FrozenModel build_patch_recall_model(const FrozenModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    FrozenModel model(spec);
    const Layout L(spec);
    const std::size_t D = L.width, H = spec.n_heads, p = spec.code_width(), S = spec.slot_width();
    const std::size_t G = spec.phase_period, C = spec.n_classes;

    Rng rng(seed);
    auto noisy = [&](std::size_t r, std::size_t c) { return rng.normal_matrix(r, c, spec.weight_noise); };
    model.m_wq = noisy(D, H * p);
    model.m_wk = noisy(D, H * p);
    model.m_wv = noisy(D, H * S);
    model.m_wo = noisy(H * S, D);
    model.m_a = noisy(D, S);
    model.m_b = noisy(D, S);
    model.m_u = noisy(S, C);
    model.m_bias = Tensor::matrix(1, S);
    for (std::size_t s = 0; s < G * C; ++s) {
        model.m_bias(0, s) = -spec.slot_threshold;
    }

    // Head 0 retrieves by code similarity; extra heads carry noise only.
    const double q_gain = spec.attn_scale * std::sqrt(static_cast<double>(p));
    for (std::size_t i = 0; i < p; ++i) {
        model.m_wq(L.q_code + i, i) += q_gain;
        model.m_wk(L.code + i, i) += 1.0 / spec.pos_amplitude;
    }
    for (std::size_t s = 0; s < S; ++s) {
        model.m_wv(L.slots + s, s) += 1.0;
        model.m_wo(s, L.slots + s) += 1.0;
        model.m_b(L.slots + s, s) += 1.0;
    }
    for (std::size_t g = 0; g < G; ++g) {
        for (std::size_t c = 0; c < C; ++c) {
            model.m_a(L.q_phase + g, g * C + c) += spec.slot_gain;
            model.m_u(g * C + c, c) += 1.0 / spec.temperature;
        }
    }
    for (std::size_t c = 0; c < C; ++c) {
        model.m_a(L.is_query, G * C + c) += spec.shared_gain;
        model.m_u(G * C + c, c) += 1.0 / spec.temperature;
    }

    model.m_embed = Tensor::matrix(spec.vocab_size(), D);
    for (std::size_t c = 0; c < C; ++c) {
        model.m_embed(c, L.answer + c) = 1.0;
    }
    model.m_embed(C, L.is_sep) = 1.0;
    for (std::size_t q = 0; q < spec.n_max; ++q) {
        const std::size_t row = C + 1 + q;
        const auto code = model.m_encoder.position_code(q);
        for (std::size_t i = 0; i < p; ++i) {
            model.m_embed(row, L.q_code + i) = code[i];
        }
        model.m_embed(row, L.q_phase + q % G) = 1.0;
        model.m_embed(row, L.is_query) = 1.0;
    }
    return model;
}

namespace {

// out += x * W for a row vector x, skipping zero entries of x.
void accumulate_row(std::span<const double> x, const Tensor& W, std::span<double> out) {
    const std::size_t c = W.cols();
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double xi = x[i];
        if (xi == 0.0) {
            continue;
        }
        const double* w = W.row(i).data();
        for (std::size_t j = 0; j < c; ++j) {
            out[j] += xi * w[j];
        }
    }
}

std::vector<double> row_times(std::span<const double> x, const Tensor& W) {
    std::vector<double> out(W.cols(), 0.0);
    accumulate_row(x, W, out);
    return out;
}

void softmax_inplace(std::span<double> v) {
    const double peak = *std::max_element(v.begin(), v.end());
    double z = 0.0;
    for (double& x : v) {
        x = std::exp(x - peak);
        z += x;
    }
    for (double& x : v) {
        x /= z;
    }
}

// Attention weights of one query over `len` cached keys, per head.
std::vector<std::vector<double>> attention_weights(const FrozenModel& model, std::span<const double> q,
                                                   std::span<const double> keys, std::size_t len) {
    const std::size_t H = model.spec().n_heads, p = model.head_key_width();
    const double inv = 1.0 / std::sqrt(static_cast<double>(p));
    std::vector<std::vector<double>> weights(H, std::vector<double>(len));
    for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t t = 0; t < len; ++t) {
            const double* k = keys.data() + t * H * p + h * p;
            double s = 0.0;
            for (std::size_t i = 0; i < p; ++i) {
                s += q[h * p + i] * k[i];
            }
            weights[h][t] = s * inv;
        }
        softmax_inplace(weights[h]);
    }
    return weights;
}

// Output at the newest position given the keys/values of positions [0, len).
StepOutput readout(const FrozenModel& model, std::span<const double> x, std::span<const double> keys,
                   std::span<const double> values, std::size_t len) {
    const std::size_t H = model.spec().n_heads, S = model.head_value_width();
    const auto q = row_times(x, model.w_q());
    const auto weights = attention_weights(model, q, keys, len);
    std::vector<double> attn(H * S, 0.0);
    for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t t = 0; t < len; ++t) {
            const double a = weights[h][t];
            const double* v = values.data() + t * H * S + h * S;
            for (std::size_t s = 0; s < S; ++s) {
                attn[h * S + s] += a * v[s];
            }
        }
    }
    std::vector<double> r(x.begin(), x.end());
    accumulate_row(attn, model.w_o(), r);
    auto ga = row_times(r, model.ffn_a());
    const auto gb = row_times(r, model.ffn_b());
    for (std::size_t i = 0; i < ga.size(); ++i) {
        const double pre = gb[i] + model.ffn_bias()[i];
        ga[i] *= pre > 0.0 ? pre : 0.0;
    }
    StepOutput out;
    out.logits = row_times(ga, model.ffn_u());
    out.probs = out.logits;
    softmax_inplace(out.probs);
    return out;
}

void check_sequence(const FrozenModel& model, const Tensor& sequence) {
    if (sequence.rank() != 2 || sequence.cols() != model.width()) {
        throw std::invalid_argument("sequence must have width " + std::to_string(model.width()) + ", got " +
                                    shape_string(sequence.shape()));
    }
    if (sequence.rows() == 0) {
        throw std::invalid_argument("prefill: empty input");
    }
}

}  // namespace

std::pair<KVCache, StepOutput> prefill(const FrozenModel& model, const Tensor& sequence) {
    check_sequence(model, sequence);
    const std::size_t H = model.spec().n_heads;
    KVCache cache(1, H * model.head_key_width(), H * model.head_value_width());
    for (std::size_t t = 0; t < sequence.rows(); ++t) {
        const auto x = sequence.row(t);
        cache.append(0, row_times(x, model.w_k()), row_times(x, model.w_v()));
        cache.commit();
    }
    StepOutput out = readout(model, sequence.row(sequence.rows() - 1), cache.keys(0), cache.values(0), cache.length());
    return {std::move(cache), std::move(out)};
}

StepOutput decode_step(const FrozenModel& model, KVCache& cache, std::span<const double> row) {
    if (!cache.initialized() || cache.length() == 0) {
        throw std::logic_error("decode_step: cache has not been initialized by prefill");
    }
    if (row.size() != model.width()) {
        throw std::invalid_argument("decode_step: row width mismatch");
    }
    cache.append(0, row_times(row, model.w_k()), row_times(row, model.w_v()));
    cache.commit();
    return readout(model, row, cache.keys(0), cache.values(0), cache.length());
}

StepOutput decode_token(const FrozenModel& model, KVCache& cache, std::size_t token_id) {
    if (token_id >= model.embedding().rows()) {
        throw std::invalid_argument("token id " + std::to_string(token_id) + " outside the vocabulary");
    }
    return decode_step(model, cache, model.embedding().row(token_id));
}

std::vector<StepOutput> full_forward(const FrozenModel& model, const Tensor& sequence) {
    check_sequence(model, sequence);
    const std::size_t L = sequence.rows();
    // Dense projections of the whole sequence, then causal attention per row.
    Tensor K = Tensor::matrix(L, model.w_k().cols());
    Tensor V = Tensor::matrix(L, model.w_v().cols());
    for (std::size_t t = 0; t < L; ++t) {
        for (std::size_t i = 0; i < model.width(); ++i) {
            const double x = sequence(t, i);
            for (std::size_t j = 0; j < K.cols(); ++j) {
                K(t, j) += x * model.w_k()(i, j);
            }
            for (std::size_t j = 0; j < V.cols(); ++j) {
                V(t, j) += x * model.w_v()(i, j);
            }
        }
    }
    std::vector<StepOutput> out;
    out.reserve(L);
    for (std::size_t t = 0; t < L; ++t) {
        out.push_back(readout(model, sequence.row(t), K.data(), V.data(), t + 1));
    }
    return out;
}

std::vector<double> prompt_attention(const FrozenModel& model, const Tensor& image_tokens,
                                     std::span<const std::size_t> prompt_ids) {
    if (prompt_ids.empty()) {
        throw std::invalid_argument("prompt_attention: empty prompt");
    }
    const Tensor img = model.project_image(image_tokens);
    const Tensor text = model.embed(prompt_ids);
    const std::size_t n = img.rows(), H = model.spec().n_heads;
    std::vector<double> keys;
    for (const Tensor* part : {&img, &text}) {
        for (std::size_t t = 0; t < part->rows(); ++t) {
            const auto k = row_times(part->row(t), model.w_k());
            keys.insert(keys.end(), k.begin(), k.end());
        }
    }
    const auto q = row_times(text.row(text.rows() - 1), model.w_q());
    const auto weights = attention_weights(model, q, keys, n + text.rows());
    std::vector<double> scores(n, 0.0);
    for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t j = 0; j < n; ++j) {
            scores[j] += weights[h][j] / static_cast<double>(H);
        }
    }
    return scores;
}

std::vector<std::size_t> turn_prompt(const FrozenModel& model, const Turn& turn) {
    return {model.sep_token(), model.position_token(turn.query)};
}

DialogueResult run_dialogue(const FrozenModel& model,
                            const DialogueEpisode& episode,
                            const TokenReducer* reducer,
                            DecodeMode mode,
                            std::span<const std::size_t> forced_answers) {
    if (episode.turns.empty()) {
        throw std::invalid_argument("run_dialogue: episode has no turns");
    }
    if (!forced_answers.empty() && forced_answers.size() != episode.turns.size()) {
        throw std::invalid_argument("run_dialogue: one forced answer per turn required");
    }
    DialogueResult result;
    result.image_tokens_in = episode.n();
    Tensor tokens;
    if (reducer != nullptr) {
        ReductionRequest request{episode.image_tokens, episode.id, &model, std::nullopt};
        if (reducer->prompt_dependent()) {
            request.first_prompt = turn_prompt(model, episode.turns.front());
        }
        const CompressionMatrix P = reducer->reduce(request);
        if (P.n() != episode.n()) {
            throw CompressionError("reducer '" + reducer->name() + "' returned a matrix over " +
                                   std::to_string(P.n()) + " tokens for an image of " + std::to_string(episode.n()));
        }
        tokens = P.apply(episode.image_tokens);
        result.reductions = 1;
    } else {
        tokens = episode.image_tokens;
    }
    result.image_tokens_kept = tokens.rows();

    auto [cache, first] = prefill(model, model.project_image(tokens));
    (void)first;
    for (std::size_t t = 0; t < episode.turns.size(); ++t) {
        const Turn& turn = episode.turns[t];
        StepOutput out;
        for (std::size_t id : turn_prompt(model, turn)) {
            out = decode_token(model, cache, id);
        }
        TurnResult tr;
        tr.trace = Tensor({kAnswerLength, model.spec().n_classes}, out.probs);
        const auto best = std::max_element(out.probs.begin(), out.probs.end()) - out.probs.begin();
        const std::size_t greedy = static_cast<std::size_t>(best);
        tr.answer = greedy;
        tr.correct = greedy == turn.gold;
        std::size_t fed = greedy;
        if (mode == DecodeMode::Forced) {
            fed = forced_answers.empty() ? turn.gold : forced_answers[t];
        }
        decode_token(model, cache, model.answer_token(fed));
        result.turns.push_back(std::move(tr));
    }
    return result;
}

Var forced_trace(Tape& tape, const FrozenModel& model, Var image_tokens, const DialogueEpisode& episode,
                 std::span<const std::size_t> answers) {
    const FrozenModelSpec& spec = model.spec();
    if (image_tokens.cols() != spec.image_width()) {
        throw std::invalid_argument("forced_trace: image tokens have width " + std::to_string(image_tokens.cols()));
    }
    if (answers.size() != episode.turns.size()) {
        throw std::invalid_argument("forced_trace: one answer per turn required");
    }
    const std::size_t m = image_tokens.rows(), H = spec.n_heads, p = model.head_key_width();
    const std::size_t S = model.head_value_width();

    std::vector<std::size_t> text_ids;
    std::vector<std::size_t> readout_rows;
    for (std::size_t t = 0; t < episode.turns.size(); ++t) {
        for (std::size_t id : turn_prompt(model, episode.turns[t])) {
            text_ids.push_back(id);
        }
        readout_rows.push_back(m + text_ids.size() - 1);
        text_ids.push_back(model.answer_token(answers[t]));
    }

    const Var pad = tape.constant(Tensor::matrix(m, model.width() - spec.image_width()));
    const Var img_parts[] = {image_tokens, pad};
    const Var img = concat_cols(img_parts);
    const Var text = tape.constant(model.embed(text_ids));
    const Var seq_parts[] = {img, text};
    const Var seq = concat_rows(seq_parts);

    const Var wq = tape.constant(model.w_q());
    const Var wk = tape.constant(model.w_k());
    const Var wv = tape.constant(model.w_v());
    const Var wo = tape.constant(model.w_o());
    const Var A = tape.constant(model.ffn_a());
    const Var B = tape.constant(model.ffn_b());
    const Var U = tape.constant(model.ffn_u());
    const Var bias = tape.constant(model.ffn_bias());
    const Var K = matmul(seq, wk);
    const Var V = matmul(seq, wv);
    const double inv = 1.0 / std::sqrt(static_cast<double>(p));

    std::vector<Var> rows;
    for (std::size_t r : readout_rows) {
        std::vector<std::size_t> prefix(r + 1);
        std::iota(prefix.begin(), prefix.end(), std::size_t{0});
        const std::size_t self[] = {r};
        const Var x = gather_rows(seq, self);
        const Var q = matmul(x, wq);
        const Var Kp = gather_rows(K, prefix);
        const Var Vp = gather_rows(V, prefix);
        std::vector<Var> heads;
        for (std::size_t h = 0; h < H; ++h) {
            const Var qh = slice_cols(q, h * p, (h + 1) * p);
            const Var kh = slice_cols(Kp, h * p, (h + 1) * p);
            const Var vh = slice_cols(Vp, h * S, (h + 1) * S);
            const Var a = row_softmax(scale(matmul(qh, transpose(kh)), inv));
            heads.push_back(matmul(a, vh));
        }
        const Var attn = H == 1 ? heads.front() : concat_cols(heads);
        const Var res = add(x, matmul(attn, wo));
        const Var gate = mul(matmul(res, A), relu(add(matmul(res, B), bias)));
        rows.push_back(row_softmax(matmul(gate, U)));
    }
    return concat_rows(rows);
}

ReferenceRun reference_run(const FrozenModel& model, const DialogueEpisode& episode) {
    const DialogueResult res = run_dialogue(model, episode, nullptr, DecodeMode::Greedy);
    ReferenceRun ref;
    ref.trace = Tensor::matrix(res.turns.size() * kAnswerLength, model.spec().n_classes);
    for (std::size_t t = 0; t < res.turns.size(); ++t) {
        ref.answers.push_back(res.turns[t].answer);
        const auto src = res.turns[t].trace.data();
        std::copy(src.begin(), src.end(), ref.trace.row(t).begin());
    }
    return ref;
}

TraceObjective make_trace_objective(const FrozenModel& model, const DialogueEpisode& episode) {
    ReferenceRun ref = reference_run(model, episode);
    TraceObjective obj;
    obj.reference = std::move(ref.trace);
    obj.compressed_trace = [&model, &episode, answers = std::move(ref.answers)](Tape& tape, Var tokens) {
        return forced_trace(tape, model, tokens, episode, answers);
    };
    return obj;
}

}  // namespace vtc
