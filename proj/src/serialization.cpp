#include "dpad/serialization.hpp"

#include "dpad/error.hpp"

#include <algorithm>
#include <string>

namespace dpad {

using nlohmann::ordered_json;
using json_detail::check_keys;
using json_detail::read;
using json_detail::require;

namespace json_detail {

void check_keys(const ordered_json & j, std::initializer_list<const char *> allowed, const char * where) {
    if (!j.is_object()) {
        throw ConfigError(std::string(where) + ": expected an object");
    }
    for (const auto & [key, value] : j.items()) {
        const bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char * a) { return key == a; });
        if (!known) {
            throw ConfigError(std::string(where) + ": unknown key '" + key + "'");
        }
    }
}

} // namespace json_detail

void to_json(ordered_json & j, const ModelConfig & c) {
    j = ordered_json{{"vocab_size", c.vocab_size}, {"dim", c.dim},           {"n_heads", c.n_heads},
                     {"n_layers", c.n_layers},     {"seed", c.seed},         {"rope_base", c.rope_base},
                     {"logit_gain", c.logit_gain}};
}

void from_json(const ordered_json & j, ModelConfig & c) {
    constexpr const char * where = "model";
    check_keys(j, {"vocab_size", "dim", "n_heads", "n_layers", "seed", "rope_base", "logit_gain"}, where);
    c = ModelConfig{};
    read(j, "vocab_size", c.vocab_size, where);
    read(j, "dim", c.dim, where);
    read(j, "n_heads", c.n_heads, where);
    read(j, "n_layers", c.n_layers, where);
    read(j, "seed", c.seed, where);
    read(j, "rope_base", c.rope_base, where);
    read(j, "logit_gain", c.logit_gain, where);
}

void to_json(ordered_json & j, const DropoutConfig & c) {
    j = ordered_json{{"kind", std::string(to_string(c.kind))},
                     {"window", c.window_w},
                     {"k", c.decay_k},
                     {"a", c.scale_a},
                     {"sigma", c.sigma},
                     {"mu", c.mu},
                     {"rng_seed", c.rng_seed}};
}

void from_json(const ordered_json & j, DropoutConfig & c) {
    constexpr const char * where = "dropout";
    check_keys(j, {"kind", "window", "k", "a", "sigma", "mu", "rng_seed"}, where);
    c = DropoutConfig{};
    std::string kind = std::string(to_string(c.kind));
    read(j, "kind", kind, where);
    c.kind = decay_kind_from_string(kind);
    read(j, "window", c.window_w, where);
    read(j, "k", c.decay_k, where);
    read(j, "a", c.scale_a, where);
    read(j, "sigma", c.sigma, where);
    read(j, "mu", c.mu, where);
    read(j, "rng_seed", c.rng_seed, where);
}

void to_json(ordered_json & j, const DecodePolicy & p) {
    j = ordered_json{{"mode", std::string(to_string(p.mode))},
                     {"block_size", p.block_size},
                     {"steps_per_block", p.steps_per_block},
                     {"confidence_threshold", p.confidence_threshold},
                     {"use_prefix_cache", p.use_prefix_cache},
                     {"cache_refresh", std::string(to_string(p.cache_refresh))},
                     {"use_suffix_dropout", p.use_suffix_dropout},
                     {"early_termination", p.early_termination},
                     {"eos_id", p.eos_id},
                     {"mask_id", p.mask_id}};
}

void from_json(const ordered_json & j, DecodePolicy & p) {
    constexpr const char * where = "policy";
    check_keys(j,
               {"mode", "block_size", "steps_per_block", "confidence_threshold", "use_prefix_cache", "cache_refresh",
                "use_suffix_dropout", "early_termination", "eos_id", "mask_id"},
               where);
    p = DecodePolicy{};
    std::string mode = std::string(to_string(p.mode));
    read(j, "mode", mode, where);
    p.mode = unmask_mode_from_string(mode);
    read(j, "block_size", p.block_size, where);
    read(j, "steps_per_block", p.steps_per_block, where);
    read(j, "confidence_threshold", p.confidence_threshold, where);
    read(j, "use_prefix_cache", p.use_prefix_cache, where);
    std::string refresh = std::string(to_string(p.cache_refresh));
    read(j, "cache_refresh", refresh, where);
    p.cache_refresh = cache_refresh_from_string(refresh);
    read(j, "use_suffix_dropout", p.use_suffix_dropout, where);
    read(j, "early_termination", p.early_termination, where);
    read(j, "eos_id", p.eos_id, where);
    read(j, "mask_id", p.mask_id, where);
}

void to_json(ordered_json & j, const StepRecord & r) {
    j = ordered_json{{"step", r.step},
                     {"block", r.block},
                     {"step_in_block", r.step_in_block},
                     {"unmasked_positions", r.unmasked_positions},
                     {"unmasked_tokens", r.unmasked_tokens},
                     {"confidences", r.confidences},
                     {"fallback", r.fallback},
                     {"refreshed", r.refreshed},
                     {"live_suffix_count", r.live_suffix_count},
                     {"cache_hit_positions", r.cache_hit_positions},
                     {"forward_token_count", r.forward_token_count}};
}

void from_json(const ordered_json & j, StepRecord & r) {
    constexpr const char * where = "trace.steps[]";
    require(j, "step", r.step, where);
    require(j, "block", r.block, where);
    require(j, "step_in_block", r.step_in_block, where);
    require(j, "unmasked_positions", r.unmasked_positions, where);
    require(j, "unmasked_tokens", r.unmasked_tokens, where);
    require(j, "confidences", r.confidences, where);
    require(j, "fallback", r.fallback, where);
    require(j, "refreshed", r.refreshed, where);
    require(j, "live_suffix_count", r.live_suffix_count, where);
    require(j, "cache_hit_positions", r.cache_hit_positions, where);
    require(j, "forward_token_count", r.forward_token_count, where);
}

void to_json(ordered_json & j, const BlockRecord & r) {
    j = ordered_json{{"block", r.block},
                     {"steps", r.steps},
                     {"suffix_length", r.suffix_length},
                     {"kept_suffix", r.kept_suffix},
                     {"window_start", r.window_start},
                     {"window_end", r.window_end}};
}

void from_json(const ordered_json & j, BlockRecord & r) {
    constexpr const char * where = "trace.blocks[]";
    require(j, "block", r.block, where);
    require(j, "steps", r.steps, where);
    require(j, "suffix_length", r.suffix_length, where);
    require(j, "kept_suffix", r.kept_suffix, where);
    require(j, "window_start", r.window_start, where);
    require(j, "window_end", r.window_end, where);
}

void to_json(ordered_json & j, const TraceTotals & t) {
    j = ordered_json{{"steps", t.steps},
                     {"forward_passes", t.forward_passes},
                     {"refresh_passes", t.refresh_passes},
                     {"suffix_key_visits", t.suffix_key_visits},
                     {"refresh_suffix_key_visits", t.refresh_suffix_key_visits},
                     {"generated_length", t.generated_length},
                     {"blocks_decoded", t.blocks_decoded},
                     {"terminated_early", t.terminated_early},
                     {"eos_fill_start", t.eos_fill_start}};
}

void from_json(const ordered_json & j, TraceTotals & t) {
    constexpr const char * where = "trace.totals";
    require(j, "steps", t.steps, where);
    require(j, "forward_passes", t.forward_passes, where);
    require(j, "refresh_passes", t.refresh_passes, where);
    require(j, "suffix_key_visits", t.suffix_key_visits, where);
    require(j, "refresh_suffix_key_visits", t.refresh_suffix_key_visits, where);
    require(j, "generated_length", t.generated_length, where);
    require(j, "blocks_decoded", t.blocks_decoded, where);
    require(j, "terminated_early", t.terminated_early, where);
    require(j, "eos_fill_start", t.eos_fill_start, where);
}

void to_json(ordered_json & j, const DecodeTrace & t) {
    j = ordered_json{{"prompt_len", t.prompt_len}, {"gen_len", t.gen_len}, {"policy", t.policy}};
    j["dropout"] = t.dropout ? ordered_json(*t.dropout) : ordered_json(nullptr);
    j["blocks"] = t.blocks;
    j["steps"] = t.steps;
    j["totals"] = t.totals;
}

void from_json(const ordered_json & j, DecodeTrace & t) {
    constexpr const char * where = "trace";
    require(j, "prompt_len", t.prompt_len, where);
    require(j, "gen_len", t.gen_len, where);
    require(j, "policy", t.policy, where);
    t.dropout.reset();
    if (j.contains("dropout") && !j.at("dropout").is_null()) {
        t.dropout = j.at("dropout").get<DropoutConfig>();
    }
    require(j, "blocks", t.blocks, where);
    require(j, "steps", t.steps, where);
    require(j, "totals", t.totals, where);
}

} // namespace dpad
