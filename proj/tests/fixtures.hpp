#pragma once

#include "dpad/model.hpp"
#include "dpad/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace dpad::fixtures {

inline ModelConfig small_config(std::uint64_t seed, int vocab = 32, int dim = 16, int heads = 2, int layers = 2) {
    ModelConfig c;
    c.vocab_size = vocab;
    c.dim = dim;
    c.n_heads = heads;
    c.n_layers = layers;
    c.seed = seed;
    return c;
}

// Content tokens only: never the mask (0) or eos (1) id.
inline std::vector<TokenId> random_prompt(std::uint64_t seed, std::size_t length, int vocab) {
    Rng rng(seed);
    std::vector<TokenId> out(length);
    for (auto & t : out) {
        t = static_cast<TokenId>(2 + rng.below(static_cast<std::uint64_t>(vocab - 2)));
    }
    return out;
}

inline Matrix random_matrix(Rng & rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
    Matrix m(rows, cols);
    for (auto & v : m.data()) {
        v = static_cast<float>(rng.normal() * scale);
    }
    return m;
}

inline std::vector<Position> key_union(const PrefixCache * cache, std::span<const Position> live) {
    std::vector<Position> keys(live.begin(), live.end());
    if (cache != nullptr && !cache->empty()) {
        keys.insert(keys.end(), cache->front().positions.begin(), cache->front().positions.end());
    }
    std::sort(keys.begin(), keys.end());
    return keys;
}

// Logits where `token` gets probability `confidence` among the non-mask ids.
inline std::vector<float> peaked_logits(int vocab, TokenId token, double confidence) {
    std::vector<float> l(static_cast<std::size_t>(vocab), 0.0f);
    l[static_cast<std::size_t>(token)] = static_cast<float>(std::log(confidence * (vocab - 2) / (1.0 - confidence)));
    return l;
}

// Same logits row for every live token.
class ConstantDenoiser final : public Denoiser {
public:
    ConstantDenoiser(ModelConfig config, std::vector<float> logits) : config_(config), logits_(std::move(logits)) {}

    const ModelConfig & config() const override { return config_; }

    ForwardOutput forward(std::span<const TokenId> tokens, std::span<const Position> positions,
                          const PrefixCache * cache, ForwardOptions) const override {
        ForwardOutput out;
        out.logits = Matrix(tokens.size(), logits_.size());
        for (std::size_t r = 0; r < tokens.size(); ++r) {
            std::copy(logits_.begin(), logits_.end(), out.logits.row(r).begin());
        }
        out.positions.assign(positions.begin(), positions.end());
        out.key_positions = key_union(cache, positions);
        ++calls;
        return out;
    }

    mutable std::int64_t calls = 0;

private:
    ModelConfig config_;
    std::vector<float> logits_;
};

// Wraps a real model: eos wins at positions in [begin, end) and loses elsewhere.
// Records every live position list it is asked to evaluate.
class EosForcing final : public Denoiser {
public:
    EosForcing(const Model & inner, Position begin, Position end, TokenId eos, float boost = 60.0f)
        : inner_(inner), begin_(begin), end_(end), eos_(eos), boost_(boost) {}

    const ModelConfig & config() const override { return inner_.config(); }

    ForwardOutput forward(std::span<const TokenId> tokens, std::span<const Position> positions,
                          const PrefixCache * cache, ForwardOptions options) const override {
        ForwardOutput out = inner_.forward(tokens, positions, cache, options);
        for (std::size_t r = 0; r < positions.size(); ++r) {
            const bool inside = positions[r] >= begin_ && positions[r] < end_;
            out.logits(r, static_cast<std::size_t>(eos_)) += inside ? boost_ : -boost_;
        }
        calls.emplace_back(positions.begin(), positions.end());
        return out;
    }

    mutable std::vector<std::vector<Position>> calls;

private:
    const Model & inner_;
    Position begin_;
    Position end_;
    TokenId eos_;
    float boost_;
};

} // namespace dpad::fixtures
