#include "dpad/run_config.hpp"

#include "dpad/error.hpp"
#include "dpad/rng.hpp"
#include "dpad/serialization.hpp"

#include <fstream>
#include <sstream>

namespace dpad {

using nlohmann::ordered_json;
using json_detail::check_keys;
using json_detail::read;

namespace {

DropoutConfig parse_dropout_object(const ordered_json & j, const char * where) {
    if (j.contains("rng_seed")) {
        throw ConfigError(std::string(where) + ": rng_seed is taken from the top-level seed");
    }
    return j.get<DropoutConfig>();
}

// Reads the "dropout"/"preset" pair of an object. Returns nullopt when
// neither key is present.
std::optional<DropoutChoice> parse_dropout_choice(const ordered_json & j, const char * where) {
    const bool has_dropout = j.contains("dropout");
    const bool has_preset = j.contains("preset");
    if (has_dropout && has_preset && !j.at("dropout").is_null()) {
        throw ConfigError(std::string(where) + ": give either 'dropout' or 'preset', not both");
    }
    if (has_preset) {
        DropoutChoice c;
        c.kind = DropoutChoice::Kind::preset;
        read(j, "preset", c.preset, where);
        preset(c.preset);  // validates the key
        return c;
    }
    if (has_dropout) {
        DropoutChoice c;
        if (!j.at("dropout").is_null()) {
            c.kind = DropoutChoice::Kind::config;
            c.config = parse_dropout_object(j.at("dropout"), where);
            c.config.validate();
        }
        return c;
    }
    return std::nullopt;
}

void write_dropout_choice(ordered_json & j, const DropoutChoice & c) {
    switch (c.kind) {
    case DropoutChoice::Kind::none:
        j["dropout"] = nullptr;
        break;
    case DropoutChoice::Kind::config: {
        ordered_json d = c.config;
        d.erase("rng_seed");
        j["dropout"] = d;
        break;
    }
    case DropoutChoice::Kind::preset:
        j["preset"] = c.preset;
        break;
    }
}

PromptSpec parse_prompt(const ordered_json & j) {
    PromptSpec p;
    if (j.is_array()) {
        read(ordered_json{{"tokens", j}}, "tokens", p.tokens, "prompt");
        return p;
    }
    check_keys(j, {"tokens", "seed", "length"}, "prompt");
    if (j.contains("tokens") == j.contains("seed")) {
        throw ConfigError("prompt: give either 'tokens' or 'seed' with 'length'");
    }
    read(j, "tokens", p.tokens, "prompt");
    if (j.contains("seed")) {
        std::uint64_t seed = 0;
        read(j, "seed", seed, "prompt");
        p.seed = seed;
        json_detail::require(j, "length", p.length, "prompt");
        if (p.length < 0) {
            throw ConfigError("prompt.length must be non-negative");
        }
    }
    return p;
}

template <typename T>
std::optional<T> read_optional(const ordered_json & j, const char * key, const char * where) {
    if (!j.contains(key) || j.at(key).is_null()) {
        return std::nullopt;
    }
    T v{};
    read(j, key, v, where);
    return v;
}

template <typename T>
ordered_json optional_json(const std::optional<T> & v) {
    return v ? ordered_json(*v) : ordered_json(nullptr);
}

} // namespace

std::optional<DropoutConfig> RunConfig::resolve(const DropoutChoice & choice) const {
    std::optional<DropoutConfig> out;
    switch (choice.kind) {
    case DropoutChoice::Kind::none:
        return std::nullopt;
    case DropoutChoice::Kind::config:
        out = choice.config;
        break;
    case DropoutChoice::Kind::preset:
        out = preset(choice.preset);
        break;
    }
    out->rng_seed = seed;
    return out;
}

std::optional<DropoutConfig> RunConfig::resolved_dropout() const {
    return resolve(dropout);
}

std::vector<TokenId> RunConfig::prompt_tokens(std::uint64_t sample) const {
    if (!prompt.seed) {
        return prompt.tokens;
    }
    Rng rng(substream_seed(*prompt.seed, sample));
    std::vector<TokenId> tokens;
    while (static_cast<std::int64_t>(tokens.size()) < prompt.length) {
        const auto t = static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(model.vocab_size)));
        if (t != policy.mask_id && t != policy.eos_id) {
            tokens.push_back(t);
        }
    }
    return tokens;
}

RunConfig parse_run_config(const ordered_json & j) {
    check_keys(j,
               {"model", "policy", "dropout", "preset", "prompt", "gen_len", "seed", "out_dir", "compare", "analyze",
                "sampler_check", "cost"},
               "config");
    RunConfig c;
    read(j, "model", c.model, "config");
    c.model.validate();
    read(j, "gen_len", c.gen_len, "config");
    read(j, "seed", c.seed, "config");
    read(j, "out_dir", c.out_dir, "config");
    if (auto d = parse_dropout_choice(j, "config")) {
        c.dropout = *d;
    }
    const bool dropout_on = c.dropout.kind != DropoutChoice::Kind::none;
    c.policy.use_suffix_dropout = dropout_on;
    if (j.contains("policy")) {
        ordered_json base = c.policy;
        base.merge_patch(j.at("policy"));
        c.policy = base.get<DecodePolicy>();
    }
    c.policy.validate(c.model.vocab_size);
    if (c.policy.use_suffix_dropout && !dropout_on) {
        throw ConfigError("policy.use_suffix_dropout is true but no dropout or preset is configured");
    }
    if (c.gen_len < 0 || c.gen_len % c.policy.block_size != 0) {
        throw ConfigError("gen_len " + std::to_string(c.gen_len) + " is not a multiple of block_size " +
                          std::to_string(c.policy.block_size));
    }
    if (j.contains("prompt")) {
        c.prompt = parse_prompt(j.at("prompt"));
        for (TokenId t : c.prompt.tokens) {
            if (t < 0 || t >= c.model.vocab_size) {
                throw ConfigError("prompt token " + std::to_string(t) + " outside the vocabulary");
            }
        }
    }

    if (j.contains("compare")) {
        const auto & cj = j.at("compare");
        check_keys(cj, {"a", "b", "expect"}, "compare");
        std::string expect = "identical";
        read(cj, "expect", expect, "compare");
        if (expect != "identical" && expect != "may-differ") {
            throw ConfigError("compare.expect must be 'identical' or 'may-differ'");
        }
        c.compare.expect_identical = expect == "identical";
        for (const char * key : {"a", "b"}) {
            CompareSide side;
            if (cj.contains(key)) {
                const auto & sj = cj.at(key);
                check_keys(sj, {"policy", "dropout", "preset"}, "compare side");
                if (sj.contains("policy")) {
                    side.policy_patch = sj.at("policy");
                    ordered_json merged = c.policy;
                    merged.merge_patch(side.policy_patch);
                    merged.get<DecodePolicy>().validate(c.model.vocab_size);
                }
                side.dropout = parse_dropout_choice(sj, "compare side");
            }
            (std::string(key) == "a" ? c.compare.a : c.compare.b) = side;
        }
    }

    if (j.contains("analyze")) {
        const auto & aj = j.at("analyze");
        constexpr const char * where = "analyze";
        check_keys(aj, {"samples", "block", "alignment", "layer", "head", "top_n", "exclusion_prefix"}, where);
        read(aj, "samples", c.analyze.samples, where);
        read(aj, "block", c.analyze.block, where);
        read(aj, "alignment", c.analyze.alignment, where);
        c.analyze.layer = read_optional<std::size_t>(aj, "layer", where);
        c.analyze.head = read_optional<std::size_t>(aj, "head", where);
        read(aj, "top_n", c.analyze.top_n, where);
        read(aj, "exclusion_prefix", c.analyze.exclusion_prefix, where);
        if (c.analyze.samples < 1) {
            throw ConfigError("analyze.samples must be at least 1");
        }
        if (c.analyze.block < 0 || c.analyze.block >= c.gen_len / c.policy.block_size) {
            throw ConfigError("analyze.block " + std::to_string(c.analyze.block) + " outside the generation blocks");
        }
        if (c.analyze.layer && *c.analyze.layer >= static_cast<std::size_t>(c.model.n_layers)) {
            throw ConfigError("analyze.layer out of range");
        }
        if (c.analyze.head && *c.analyze.head >= static_cast<std::size_t>(c.model.n_heads)) {
            throw ConfigError("analyze.head out of range");
        }
    }

    if (j.contains("sampler_check")) {
        const auto & sj = j.at("sampler_check");
        constexpr const char * where = "sampler_check";
        check_keys(sj, {"draws", "sigma_bound", "expected_override"}, where);
        read(sj, "draws", c.sampler_check.draws, where);
        read(sj, "sigma_bound", c.sampler_check.sigma_bound, where);
        if (sj.contains("expected_override")) {
            for (const auto & [k, v] : sj.at("expected_override").items()) {
                std::int64_t d = 0;
                try {
                    d = std::stoll(k);
                } catch (const std::exception &) {
                    throw ConfigError("sampler_check.expected_override: key '" + k + "' is not a distance");
                }
                c.sampler_check.expected_override[d] = v.get<double>();
            }
        }
        if (c.sampler_check.draws < 1) {
            throw ConfigError("sampler_check.draws must be at least 1");
        }
    }

    if (j.contains("cost")) {
        const auto & kj = j.at("cost");
        constexpr const char * where = "cost";
        check_keys(kj, {"L", "B", "W", "density", "steps_per_block", "trace", "sweep"}, where);
        c.cost.gen_len = read_optional<std::int64_t>(kj, "L", where);
        c.cost.block_size = read_optional<std::int64_t>(kj, "B", where);
        c.cost.window = read_optional<std::int64_t>(kj, "W", where);
        c.cost.density = read_optional<double>(kj, "density", where);
        read(kj, "steps_per_block", c.cost.steps_per_block, where);
        c.cost.trace = read_optional<std::string>(kj, "trace", where);
        if (kj.contains("sweep")) {
            const auto & sw = kj.at("sweep");
            check_keys(sw, {"L", "B", "W", "density"}, "cost.sweep");
            json_detail::require(sw, "L", c.cost.sweep_gen_len, "cost.sweep");
            json_detail::require(sw, "B", c.cost.sweep_block_size, "cost.sweep");
            json_detail::require(sw, "W", c.cost.sweep_window, "cost.sweep");
            json_detail::require(sw, "density", c.cost.sweep_density, "cost.sweep");
            if (c.cost.sweep_gen_len.empty() || c.cost.sweep_block_size.empty() || c.cost.sweep_window.empty() ||
                c.cost.sweep_density.empty()) {
                throw ConfigError("cost.sweep: every axis needs at least one value");
            }
        }
    }
    return c;
}

ordered_json serialize_run_config(const RunConfig & c) {
    ordered_json j;
    j["model"] = c.model;
    j["policy"] = c.policy;
    write_dropout_choice(j, c.dropout);
    ordered_json prompt;
    if (c.prompt.seed) {
        prompt = {{"seed", *c.prompt.seed}, {"length", c.prompt.length}};
    } else {
        prompt = {{"tokens", c.prompt.tokens}};
    }
    j["prompt"] = prompt;
    j["gen_len"] = c.gen_len;
    j["seed"] = c.seed;
    j["out_dir"] = c.out_dir;

    ordered_json compare;
    compare["expect"] = c.compare.expect_identical ? "identical" : "may-differ";
    for (const auto & [key, side] : {std::pair<const char *, const CompareSide &>{"a", c.compare.a}, {"b", c.compare.b}}) {
        ordered_json s;
        s["policy"] = side.policy_patch;
        if (side.dropout) {
            write_dropout_choice(s, *side.dropout);
        }
        compare[key] = s;
    }
    j["compare"] = compare;

    j["analyze"] = {{"samples", c.analyze.samples},
                    {"block", c.analyze.block},
                    {"alignment", c.analyze.alignment},
                    {"layer", optional_json(c.analyze.layer)},
                    {"head", optional_json(c.analyze.head)},
                    {"top_n", c.analyze.top_n},
                    {"exclusion_prefix", c.analyze.exclusion_prefix}};

    ordered_json overrides = ordered_json::object();
    for (const auto & [d, p] : c.sampler_check.expected_override) {
        overrides[std::to_string(d)] = p;
    }
    j["sampler_check"] = {{"draws", c.sampler_check.draws},
                          {"sigma_bound", c.sampler_check.sigma_bound},
                          {"expected_override", overrides}};

    ordered_json cost = {{"L", optional_json(c.cost.gen_len)},
                         {"B", optional_json(c.cost.block_size)},
                         {"W", optional_json(c.cost.window)},
                         {"density", optional_json(c.cost.density)},
                         {"steps_per_block", c.cost.steps_per_block},
                         {"trace", optional_json(c.cost.trace)}};
    if (c.cost.is_sweep()) {
        cost["sweep"] = {{"L", c.cost.sweep_gen_len},
                         {"B", c.cost.sweep_block_size},
                         {"W", c.cost.sweep_window},
                         {"density", c.cost.sweep_density}};
    }
    j["cost"] = cost;
    return j;
}

RunConfig load_run_config(const std::filesystem::path & path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read config file");
    }
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error & e) {
        std::size_t line = 1;
        std::size_t col = 1;
        for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        std::string reason = e.what();
        if (const auto at = reason.find(": "); at != std::string::npos) {
            reason = reason.substr(at + 2);
        }
        throw ConfigError(std::to_string(line) + ":" + std::to_string(col) + ": invalid JSON: " + reason);
    }
    return parse_run_config(j);
}

} // namespace dpad
