#include "dpad/model.hpp"

#include "dpad/error.hpp"
#include "dpad/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <string>
#include <unordered_set>

namespace dpad {

void ModelConfig::validate() const {
    if (vocab_size < 3) {
        throw ConfigError("vocab_size must be at least 3 (mask, eos and one content token), got " +
                          std::to_string(vocab_size));
    }
    if (dim <= 0 || n_heads <= 0 || n_layers <= 0) {
        throw ConfigError("dim, n_heads and n_layers must be positive");
    }
    if (dim % n_heads != 0) {
        throw ConfigError("dim " + std::to_string(dim) + " is not divisible by n_heads " + std::to_string(n_heads));
    }
    if (head_dim() % 2 != 0) {
        throw ConfigError("head_dim " + std::to_string(head_dim()) + " must be even for rotary embeddings");
    }
    if (!(rope_base > 1.0)) {
        throw ConfigError("rope_base must be greater than 1");
    }
    if (!std::isfinite(logit_gain) || logit_gain <= 0.0) {
        throw ConfigError("logit_gain must be positive and finite");
    }
}

namespace {

Matrix gaussian(Rng & rng, std::size_t rows, std::size_t cols, double scale) {
    Matrix m(rows, cols);
    for (float & v : m.data()) {
        v = static_cast<float>(rng.normal() * scale);
    }
    return m;
}

Weights random_weights(const ModelConfig & cfg) {
    Rng rng(cfg.seed);
    const auto dim = static_cast<std::size_t>(cfg.dim);
    const auto vocab = static_cast<std::size_t>(cfg.vocab_size);
    const std::size_t hidden = 4 * dim;
    const double s = 1.0 / std::sqrt(static_cast<double>(dim));

    Weights w;
    w.embedding = gaussian(rng, vocab, dim, 1.0);
    for (int l = 0; l < cfg.n_layers; ++l) {
        LayerWeights lw;
        lw.attn_norm.assign(dim, 1.0f);
        lw.wq = gaussian(rng, dim, dim, s);
        lw.wk = gaussian(rng, dim, dim, s);
        lw.wv = gaussian(rng, dim, dim, s);
        lw.wo = gaussian(rng, dim, dim, s);
        lw.ffn_norm.assign(dim, 1.0f);
        lw.w1 = gaussian(rng, dim, hidden, s);
        lw.w2 = gaussian(rng, hidden, dim, 1.0 / std::sqrt(static_cast<double>(hidden)));
        w.layers.push_back(std::move(lw));
    }
    w.final_norm.assign(dim, 1.0f);
    w.output = gaussian(rng, dim, vocab, s * cfg.logit_gain);
    return w;
}

void check_weights(const ModelConfig & cfg, const Weights & w) {
    const auto dim = static_cast<std::size_t>(cfg.dim);
    const auto vocab = static_cast<std::size_t>(cfg.vocab_size);
    auto expect = [](const Matrix & m, std::size_t r, std::size_t c, const char * name) {
        if (m.rows() != r || m.cols() != c) {
            throw ShapeError(std::string("weight ") + name + " has shape " + std::to_string(m.rows()) + "x" +
                             std::to_string(m.cols()) + ", expected " + std::to_string(r) + "x" + std::to_string(c));
        }
    };
    expect(w.embedding, vocab, dim, "embedding");
    expect(w.output, dim, vocab, "output");
    if (w.layers.size() != static_cast<std::size_t>(cfg.n_layers)) {
        throw ShapeError("layer count does not match config");
    }
    for (const auto & lw : w.layers) {
        expect(lw.wq, dim, dim, "wq");
        expect(lw.wk, dim, dim, "wk");
        expect(lw.wv, dim, dim, "wv");
        expect(lw.wo, dim, dim, "wo");
        expect(lw.w1, dim, 4 * dim, "w1");
        expect(lw.w2, 4 * dim, dim, "w2");
        if (lw.attn_norm.size() != dim || lw.ffn_norm.size() != dim) {
            throw ShapeError("norm gain length does not match dim");
        }
    }
    if (w.final_norm.size() != dim) {
        throw ShapeError("final norm gain length does not match dim");
    }
}

void gelu_inplace(Matrix & m) {
    constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
    for (float & v : m.data()) {
        const double x = v;
        v = static_cast<float>(0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x))));
    }
}

void rotate_heads(Matrix & m, std::span<const Position> positions, const RotaryTable & table, int n_heads) {
    const std::size_t hd = table.head_dim();
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto row = m.row(r);
        for (int h = 0; h < n_heads; ++h) {
            apply_rotary_inplace(row.subspan(static_cast<std::size_t>(h) * hd, hd), positions[r], table);
        }
    }
}

void validate_inputs(std::span<const TokenId> tokens, std::span<const Position> positions, const PrefixCache * cache,
                     const ModelConfig & cfg) {
    if (tokens.size() != positions.size()) {
        throw ShapeError("forward: " + std::to_string(tokens.size()) + " tokens but " +
                         std::to_string(positions.size()) + " positions");
    }
    for (TokenId t : tokens) {
        if (t < 0 || t >= cfg.vocab_size) {
            throw RangeError("forward: token id " + std::to_string(t) + " outside vocabulary");
        }
    }
    std::unordered_set<Position> live;
    for (Position p : positions) {
        if (p < 0) {
            throw RangeError("forward: negative position " + std::to_string(p));
        }
        if (!live.insert(p).second) {
            throw RangeError("forward: duplicate live position " + std::to_string(p));
        }
    }
    if (cache == nullptr || cache->empty()) {
        return;
    }
    if (cache->size() != static_cast<std::size_t>(cfg.n_layers)) {
        throw CacheConsistencyError("forward: cache has " + std::to_string(cache->size()) + " entries for " +
                                    std::to_string(cfg.n_layers) + " layers");
    }
    for (std::size_t l = 0; l < cache->size(); ++l) {
        const auto & e = (*cache)[l];
        if (e.layer != l) {
            throw CacheConsistencyError("forward: cache entry " + std::to_string(l) + " is tagged layer " +
                                        std::to_string(e.layer));
        }
        if (e.keys.rows() != e.positions.size() || e.values.rows() != e.positions.size() ||
            e.keys.cols() != static_cast<std::size_t>(cfg.dim) || e.values.cols() != static_cast<std::size_t>(cfg.dim)) {
            throw CacheConsistencyError("forward: cache entry shape does not match its position list");
        }
        for (std::size_t i = 0; i < e.positions.size(); ++i) {
            if (i > 0 && e.positions[i] <= e.positions[i - 1]) {
                throw CacheConsistencyError("forward: cache positions must be strictly increasing");
            }
            if (live.count(e.positions[i]) != 0) {
                throw CacheConsistencyError("forward: position " + std::to_string(e.positions[i]) +
                                            " is both cached and live");
            }
        }
    }
}

} // namespace

Model::Model(ModelConfig config) : Model(config, (config.validate(), random_weights(config))) {}

Model::Model(ModelConfig config, Weights weights)
    : config_(config),
      weights_(std::move(weights)),
      rotary_((config_.validate(), static_cast<std::size_t>(config_.head_dim())), config_.rope_base) {
    check_weights(config_, weights_);
}

Model init_model(const ModelConfig & config) {
    return Model(config);
}

ForwardOutput Model::forward(std::span<const TokenId> tokens, std::span<const Position> positions,
                             const PrefixCache * cache, ForwardOptions options) const {
    validate_inputs(tokens, positions, cache, config_);
    const bool use_cache = cache != nullptr && !cache->empty();
    const std::size_t n = tokens.size();
    const auto dim = static_cast<std::size_t>(config_.dim);
    const auto hd = static_cast<std::size_t>(config_.head_dim());
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    ForwardOutput out;
    out.positions.assign(positions.begin(), positions.end());

    // Attendable keys in ascending absolute position. Source index < 0 means
    // cached row (-1 - row), otherwise a live row.
    std::vector<std::pair<Position, std::ptrdiff_t>> key_order;
    if (use_cache) {
        const auto & e = cache->front();
        for (std::size_t i = 0; i < e.positions.size(); ++i) {
            key_order.emplace_back(e.positions[i], -1 - static_cast<std::ptrdiff_t>(i));
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        key_order.emplace_back(positions[i], static_cast<std::ptrdiff_t>(i));
    }
    std::sort(key_order.begin(), key_order.end());
    const std::size_t nk = key_order.size();
    out.key_positions.reserve(nk);
    for (const auto & [p, src] : key_order) {
        out.key_positions.push_back(p);
    }

    Matrix x(n, dim);
    for (std::size_t i = 0; i < n; ++i) {
        auto src = weights_.embedding.row(static_cast<std::size_t>(tokens[i]));
        std::copy(src.begin(), src.end(), x.row(i).begin());
    }

    for (std::size_t l = 0; l < weights_.layers.size(); ++l) {
        const auto & lw = weights_.layers[l];
        const Matrix h = rms_norm(x, lw.attn_norm);
        Matrix q = matmul(h, lw.wq);
        Matrix k = matmul(h, lw.wk);
        Matrix v = matmul(h, lw.wv);
        rotate_heads(q, positions, rotary_, config_.n_heads);
        rotate_heads(k, positions, rotary_, config_.n_heads);

        Matrix keys(nk, dim);
        Matrix values(nk, dim);
        for (std::size_t j = 0; j < nk; ++j) {
            const auto src = key_order[j].second;
            std::span<const float> kr;
            std::span<const float> vr;
            if (src < 0) {
                const auto row = static_cast<std::size_t>(-1 - src);
                kr = (*cache)[l].keys.row(row);
                vr = (*cache)[l].values.row(row);
            } else {
                kr = k.row(static_cast<std::size_t>(src));
                vr = v.row(static_cast<std::size_t>(src));
            }
            std::copy(kr.begin(), kr.end(), keys.row(j).begin());
            std::copy(vr.begin(), vr.end(), values.row(j).begin());
        }

        Matrix mixed(n, dim);
        std::vector<Matrix> head_maps;
        for (int head = 0; head < config_.n_heads; ++head) {
            const std::size_t c0 = static_cast<std::size_t>(head) * hd;
            const Matrix qh = q.slice(0, n, c0, c0 + hd);
            const Matrix kh_t = keys.slice(0, nk, c0, c0 + hd).transpose();
            const Matrix vh = values.slice(0, nk, c0, c0 + hd);
            Matrix scores = matmul(qh, kh_t);
            for (float & s : scores.data()) {
                s = static_cast<float>(s * scale);
            }
            Matrix probs = softmax_rows(scores);
            const Matrix oh = matmul(probs, vh);
            for (std::size_t i = 0; i < n; ++i) {
                auto src = oh.row(i);
                std::copy(src.begin(), src.end(), mixed.row(i).begin() + static_cast<std::ptrdiff_t>(c0));
            }
            if (options.capture_attention) {
                head_maps.push_back(std::move(probs));
            }
        }
        if (options.capture_attention) {
            out.attention.push_back(std::move(head_maps));
        }
        if (options.capture_states) {
            out.states.push_back(LayerStates{q, k, v});
        }

        x = add(x, matmul(mixed, lw.wo));
        Matrix f = matmul(rms_norm(x, lw.ffn_norm), lw.w1);
        gelu_inplace(f);
        x = add(x, matmul(f, lw.w2));
    }

    out.logits = matmul(rms_norm(x, weights_.final_norm), weights_.output);
    return out;
}

std::uint64_t Model::layer_checksum(std::size_t layer) const {
    if (layer >= weights_.layers.size()) {
        throw RangeError("layer index " + std::to_string(layer) + " out of range");
    }
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    auto mix = [&hash](const Matrix & m) {
        for (float v : m.data()) {
            std::uint32_t bits = 0;
            std::memcpy(&bits, &v, sizeof bits);
            for (int b = 0; b < 4; ++b) {
                hash ^= (bits >> (8 * b)) & 0xffu;
                hash *= 0x100000001b3ULL;
            }
        }
    };
    const auto & lw = weights_.layers[layer];
    mix(lw.wq);
    mix(lw.wk);
    mix(lw.wv);
    mix(lw.wo);
    mix(lw.w1);
    mix(lw.w2);
    return hash;
}

PrefixCache extract_prefix_kv(const ForwardOutput & output, Position begin, Position end) {
    if (begin > end) {
        throw RangeError("prefix range [" + std::to_string(begin) + ", " + std::to_string(end) + ") is inverted");
    }
    if (begin == end) {
        return {};
    }
    if (output.states.empty()) {
        throw ContractViolation("extract_prefix_kv: forward was run without state capture");
    }
    std::vector<std::size_t> rows;
    for (Position p = begin; p < end; ++p) {
        auto it = std::find(output.positions.begin(), output.positions.end(), p);
        if (it == output.positions.end()) {
            throw RangeError("extract_prefix_kv: position " + std::to_string(p) + " is not a live position");
        }
        rows.push_back(static_cast<std::size_t>(it - output.positions.begin()));
    }
    PrefixCache cache;
    for (std::size_t l = 0; l < output.states.size(); ++l) {
        KVCacheEntry e;
        e.layer = l;
        e.positions.resize(static_cast<std::size_t>(end - begin));
        std::iota(e.positions.begin(), e.positions.end(), begin);
        e.keys = output.states[l].keys.select_rows(rows);
        e.values = output.states[l].values.select_rows(rows);
        cache.push_back(std::move(e));
    }
    return cache;
}

} // namespace dpad
