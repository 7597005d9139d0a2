#pragma once

#include "dpad/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace dpad {

using TokenId = std::int32_t;
using Position = std::int64_t;

struct ModelConfig {
    int vocab_size = 32;  // includes the mask and eos ids
    int dim = 32;
    int n_heads = 4;
    int n_layers = 2;
    std::uint64_t seed = 0;
    double rope_base = 10000.0;
    // Multiplies the output projection at init. A random network has nearly
    // flat logits at gain 1; larger gains give peaked, confident predictions.
    double logit_gain = 1.0;

    int head_dim() const { return n_heads > 0 ? dim / n_heads : 0; }
    void validate() const;

    friend bool operator==(const ModelConfig &, const ModelConfig &) = default;
};

// Keys are stored after rotary application, so they can be attended to
// without knowing how the live batch is laid out.
struct KVCacheEntry {
    std::size_t layer = 0;
    std::vector<Position> positions;
    Matrix keys;
    Matrix values;
};

using PrefixCache = std::vector<KVCacheEntry>;

struct LayerStates {
    Matrix queries;  // post-rotary, live row order
    Matrix keys;     // post-rotary, live row order
    Matrix values;
};

struct ForwardOptions {
    bool capture_attention = false;
    bool capture_states = false;
};

struct ForwardOutput {
    Matrix logits;                                // one row per live token, input order
    std::vector<Position> positions;              // live positions, input order
    std::vector<Position> key_positions;          // attendable keys (cache + live), ascending
    std::vector<std::vector<Matrix>> attention;   // [layer][head]: live rows x key_positions
    std::vector<LayerStates> states;              // [layer]
};

// Anything that maps a (partially masked) token set at absolute positions to
// vocabulary logits. The decoder and the analysis tools only see this.
class Denoiser {
public:
    virtual ~Denoiser() = default;
    virtual const ModelConfig & config() const = 0;
    // Positions must be distinct; they need not be sorted. Cached positions
    // must be disjoint from live ones.
    virtual ForwardOutput forward(std::span<const TokenId> tokens, std::span<const Position> positions,
                                  const PrefixCache * cache, ForwardOptions options) const = 0;
};

struct LayerWeights {
    std::vector<float> attn_norm;
    Matrix wq, wk, wv, wo;
    std::vector<float> ffn_norm;
    Matrix w1, w2;
};

struct Weights {
    Matrix embedding;
    std::vector<LayerWeights> layers;
    std::vector<float> final_norm;
    Matrix output;
};

// Pre-norm bidirectional transformer with random Gaussian weights.
class Model final : public Denoiser {
public:
    explicit Model(ModelConfig config);
    Model(ModelConfig config, Weights weights);

    const ModelConfig & config() const override { return config_; }
    const Weights & weights() const { return weights_; }
    const RotaryTable & rotary() const { return rotary_; }

    ForwardOutput forward(std::span<const TokenId> tokens, std::span<const Position> positions,
                          const PrefixCache * cache, ForwardOptions options) const override;

    // FNV-1a over the raw bits of one layer's projection weights.
    std::uint64_t layer_checksum(std::size_t layer) const;

private:
    ModelConfig config_;
    Weights weights_;
    RotaryTable rotary_;
};

Model init_model(const ModelConfig & config);

// Per-layer K/V rows for live positions [begin, end) of a forward run with
// state capture. An empty range yields an empty cache.
PrefixCache extract_prefix_kv(const ForwardOutput & output, Position begin, Position end);

// <stem>.json holds the config and tensor manifest; <stem>.bin the float32
// payload in little-endian order.
void save_checkpoint(const Model & model, const std::filesystem::path & stem);
Model load_checkpoint(const std::filesystem::path & stem);

} // namespace dpad
