#pragma once

#include "dpad/decoder.hpp"
#include "dpad/model.hpp"
#include "dpad/suffix_plan.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace dpad {

// Exactly one of: no dropout, an explicit Gaussian config, or a preset key.
struct DropoutChoice {
    enum class Kind { none, config, preset };
    Kind kind = Kind::none;
    DropoutConfig config;  // rng_seed is always taken from the run seed
    std::string preset;

    friend bool operator==(const DropoutChoice &, const DropoutChoice &) = default;
};

struct PromptSpec {
    std::vector<TokenId> tokens;           // explicit prompt, or
    std::optional<std::uint64_t> seed;     // generate `length` content tokens from this seed
    std::int64_t length = 0;

    friend bool operator==(const PromptSpec &, const PromptSpec &) = default;
};

struct CompareSide {
    nlohmann::ordered_json policy_patch = nlohmann::ordered_json::object();  // merged over the base policy
    std::optional<DropoutChoice> dropout;                                    // nullopt: inherit

    friend bool operator==(const CompareSide &, const CompareSide &) = default;
};

struct CompareSpec {
    CompareSide a;
    CompareSide b;
    bool expect_identical = true;

    friend bool operator==(const CompareSpec &, const CompareSpec &) = default;
};

struct AnalyzeSpec {
    std::int64_t samples = 1;
    std::int64_t block = 0;
    std::int64_t alignment = 0;
    std::optional<std::size_t> layer;
    std::optional<std::size_t> head;
    std::size_t top_n = 10;
    std::int64_t exclusion_prefix = 128;

    friend bool operator==(const AnalyzeSpec &, const AnalyzeSpec &) = default;
};

struct SamplerCheckSpec {
    std::int64_t draws = 10000;
    double sigma_bound = 4.0;
    // Replaces the closed-form probability at chosen distances; negative
    // control for the checker itself.
    std::map<std::int64_t, double> expected_override;

    friend bool operator==(const SamplerCheckSpec &, const SamplerCheckSpec &) = default;
};

struct CostSpec {
    std::optional<std::int64_t> gen_len;  // default: run gen_len
    std::optional<std::int64_t> block_size;  // default: policy block size
    std::optional<std::int64_t> window;   // default: dropout window
    std::optional<double> density;        // default: dropout expected density
    std::int64_t steps_per_block = 1;
    std::optional<std::string> trace;     // reconcile this decode output when set
    // Sweep grid; every combination becomes one CSV row.
    std::vector<std::int64_t> sweep_gen_len;
    std::vector<std::int64_t> sweep_block_size;
    std::vector<std::int64_t> sweep_window;
    std::vector<double> sweep_density;

    bool is_sweep() const { return !sweep_gen_len.empty(); }

    friend bool operator==(const CostSpec &, const CostSpec &) = default;
};

struct RunConfig {
    ModelConfig model;
    DecodePolicy policy;
    DropoutChoice dropout;
    PromptSpec prompt;
    std::int64_t gen_len = 64;
    std::uint64_t seed = 0;
    std::string out_dir = "out";
    CompareSpec compare;
    AnalyzeSpec analyze;
    SamplerCheckSpec sampler_check;
    CostSpec cost;

    // Dropout with rng_seed bound to the run seed; nullopt when disabled.
    std::optional<DropoutConfig> resolved_dropout() const;
    std::optional<DropoutConfig> resolve(const DropoutChoice & choice) const;
    std::vector<TokenId> prompt_tokens(std::uint64_t sample = 0) const;

    friend bool operator==(const RunConfig &, const RunConfig &) = default;
};

RunConfig parse_run_config(const nlohmann::ordered_json & j);
nlohmann::ordered_json serialize_run_config(const RunConfig & config);

// Reads and parses a config file. Parse errors carry "line:col".
RunConfig load_run_config(const std::filesystem::path & path);

} // namespace dpad
