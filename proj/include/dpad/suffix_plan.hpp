#pragma once

#include "dpad/model.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace dpad {

enum class DecayKind {
    gaussian,    // right half of a normal density over distance
    retain_all,  // P(d) = 1 inside the window; oracle baseline
};

struct DropoutConfig {
    DecayKind kind = DecayKind::gaussian;
    std::int64_t window_w = 256;
    double decay_k = 4.0;
    double scale_a = 2.0;
    double sigma = 1.0;
    double mu = 0.0;
    std::uint64_t rng_seed = 0;

    static DropoutConfig retain_all(std::int64_t window, std::uint64_t seed = 0);

    void validate() const;

    friend bool operator==(const DropoutConfig &, const DropoutConfig &) = default;
};

std::string_view to_string(DecayKind kind);
DecayKind decay_kind_from_string(std::string_view name);

struct KeptSuffixToken {
    std::size_t local_slot;      // index among the kept suffix tokens
    Position original_position;  // absolute position fed to the rotary embedding

    friend bool operator==(const KeptSuffixToken &, const KeptSuffixToken &) = default;
};

struct SuffixPlan {
    std::vector<KeptSuffixToken> kept;
    Position window_start = 0;  // suffix boundary
    Position window_end = 0;    // min(boundary + W, sequence end)

    std::vector<Position> positions() const;

    friend bool operator==(const SuffixPlan &, const SuffixPlan &) = default;
};

// Distance d counts from the suffix boundary, the first suffix token has d = 1.
// Returns 0 beyond the window; clipped to at most 1.
double retention_probability(std::int64_t distance, const DropoutConfig & config);

// Mean of retention_probability over d = 1..W.
double expected_density(const DropoutConfig & config);

// Keeps each window position independently with probability P(d). The
// random stream depends only on (rng_seed, block_counter).
SuffixPlan sample_plan(Position suffix_start, Position sequence_len, const DropoutConfig & config,
                       std::uint64_t block_counter);

struct PresetEntry {
    std::string model;
    std::string benchmark;
    double decay_k;
    double scale_a;
    double reported_density;
    std::int64_t window_w;
};

const std::vector<PresetEntry> & preset_table();

DropoutConfig preset(std::string_view model, std::string_view benchmark);
// "Model/Benchmark", e.g. "LLaDA-Instruct/GSM8K".
DropoutConfig preset(std::string_view key);


struct SamplerCheckRow {
    std::int64_t distance = 0;
    double expected = 0.0;  // probability the check compares against
    std::int64_t kept = 0;
    double z = 0.0;         // (kept - n p) / sqrt(n p (1 - p)); 0 when p is 0 or 1 and matched
    bool ok = true;
};

struct SamplerCheckResult {
    std::int64_t draws = 0;
    double sigma_bound = 4.0;
    std::vector<SamplerCheckRow> rows;
    double expected_density = 0.0;
    double measured_density = 0.0;
    std::vector<std::int64_t> failures;

    bool pass() const { return failures.empty(); }
};

// Monte Carlo check of sample_plan against retention_probability: `draws`
// plans over a full window (block counters 0..draws-1), per-distance keep
// counts compared to binomial bounds. `expected_override` replaces the
// reference probability at the given distances.
SamplerCheckResult check_sampler(const DropoutConfig & config, std::int64_t draws, double sigma_bound,
                                 const std::map<std::int64_t, double> & expected_override = {});

} // namespace dpad
