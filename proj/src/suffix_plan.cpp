#include "dpad/suffix_plan.hpp"

#include "dpad/error.hpp"
#include "dpad/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace dpad {

DropoutConfig DropoutConfig::retain_all(std::int64_t window, std::uint64_t seed) {
    DropoutConfig c;
    c.kind = DecayKind::retain_all;
    c.window_w = window;
    c.rng_seed = seed;
    return c;
}

void DropoutConfig::validate() const {
    if (window_w < 1) {
        throw ConfigError("dropout window must be at least 1, got " + std::to_string(window_w));
    }
    if (kind == DecayKind::retain_all) {
        return;
    }
    if (!(decay_k > 0.0) || !std::isfinite(decay_k)) {
        throw ConfigError("decay k must be positive");
    }
    if (!(scale_a > 0.0) || !std::isfinite(scale_a)) {
        throw ConfigError("scale a must be positive");
    }
    if (!(sigma > 0.0) || !std::isfinite(sigma)) {
        throw ConfigError("sigma must be positive");
    }
    if (!std::isfinite(mu)) {
        throw ConfigError("mu must be finite");
    }
}

std::string_view to_string(DecayKind kind) {
    switch (kind) {
    case DecayKind::gaussian:
        return "gaussian";
    case DecayKind::retain_all:
        return "retain_all";
    }
    return "unknown";
}

DecayKind decay_kind_from_string(std::string_view name) {
    if (name == "gaussian") {
        return DecayKind::gaussian;
    }
    if (name == "retain_all") {
        return DecayKind::retain_all;
    }
    throw ConfigError("unknown dropout kind '" + std::string(name) + "' (expected gaussian or retain_all)");
}

std::vector<Position> SuffixPlan::positions() const {
    std::vector<Position> out;
    out.reserve(kept.size());
    for (const auto & t : kept) {
        out.push_back(t.original_position);
    }
    return out;
}

double retention_probability(std::int64_t distance, const DropoutConfig & config) {
    if (distance <= 0) {
        throw DomainError("retention distance must be positive, got " + std::to_string(distance));
    }
    if (distance > config.window_w) {
        return 0.0;
    }
    if (config.kind == DecayKind::retain_all) {
        return 1.0;
    }
    const double x = config.decay_k * config.sigma / static_cast<double>(config.window_w) * static_cast<double>(distance);
    const double z = (x - config.mu) / config.sigma;
    const double density = std::exp(-0.5 * z * z) / (config.sigma * std::sqrt(2.0 * std::numbers::pi));
    return std::min(1.0, config.scale_a * density);
}

double expected_density(const DropoutConfig & config) {
    config.validate();
    double sum = 0.0;
    for (std::int64_t d = 1; d <= config.window_w; ++d) {
        sum += retention_probability(d, config);
    }
    return sum / static_cast<double>(config.window_w);
}

SuffixPlan sample_plan(Position suffix_start, Position sequence_len, const DropoutConfig & config,
                       std::uint64_t block_counter) {
    config.validate();
    SuffixPlan plan;
    plan.window_start = suffix_start;
    plan.window_end = std::min(suffix_start + config.window_w, sequence_len);
    if (suffix_start >= sequence_len) {
        plan.window_end = suffix_start;
        return plan;
    }
    Rng rng(substream_seed(config.rng_seed, block_counter));
    for (Position pos = plan.window_start; pos < plan.window_end; ++pos) {
        const double p = retention_probability(pos - suffix_start + 1, config);
        const double u = rng.uniform();
        if (u < p) {
            plan.kept.push_back({plan.kept.size(), pos});
        }
    }
    return plan;
}

const std::vector<PresetEntry> & preset_table() {
    static const std::vector<PresetEntry> table = {
        {"LLaDA-Instruct", "GSM8K", 4.0, 2.0, 0.250, 256},
        {"LLaDA-Instruct", "Math", 4.0, 2.0, 0.250, 256},
        {"LLaDA-Instruct", "HumanEval", 3.0, 2.3, 0.375, 512},
        {"LLaDA-Instruct", "MBPP", 3.0, 2.3, 0.375, 128},
        {"LLaDA-1.5", "GSM8K", 3.0, 1.6, 0.250, 256},
        {"LLaDA-1.5", "Math", 3.0, 1.6, 0.250, 256},
        {"LLaDA-1.5", "HumanEval", 3.0, 1.6, 0.250, 128},
        {"LLaDA-1.5", "MBPP", 3.0, 1.6, 0.250, 512},
        {"Dream-Base", "GSM8K", 4.0, 1.6, 0.200, 256},
        {"Dream-Base", "Math", 4.0, 1.6, 0.200, 128},
        {"Dream-Base", "HumanEval", 3.0, 2.3, 0.375, 128},
        {"Dream-Base", "MBPP", 3.0, 1.6, 0.250, 128},
    };
    return table;
}

DropoutConfig preset(std::string_view model, std::string_view benchmark) {
    for (const auto & e : preset_table()) {
        if (e.model == model && e.benchmark == benchmark) {
            DropoutConfig c;
            c.decay_k = e.decay_k;
            c.scale_a = e.scale_a;
            c.window_w = e.window_w;
            return c;
        }
    }
    std::string known;
    for (const auto & e : preset_table()) {
        known += (known.empty() ? "" : ", ") + e.model + "/" + e.benchmark;
    }
    throw LookupError("unknown preset '" + std::string(model) + "/" + std::string(benchmark) + "'; known presets: " +
                      known);
}

DropoutConfig preset(std::string_view key) {
    const auto slash = key.find('/');
    if (slash == std::string_view::npos) {
        return preset(key, "");
    }
    return preset(key.substr(0, slash), key.substr(slash + 1));
}


SamplerCheckResult check_sampler(const DropoutConfig & config, std::int64_t draws, double sigma_bound,
                                 const std::map<std::int64_t, double> & expected_override) {
    config.validate();
    if (draws < 1) {
        throw ConfigError("sampler check needs at least one draw");
    }
    const std::int64_t w = config.window_w;
    std::vector<std::int64_t> kept(static_cast<std::size_t>(w) + 1, 0);
    std::int64_t total_kept = 0;
    for (std::int64_t i = 0; i < draws; ++i) {
        const SuffixPlan plan = sample_plan(0, w, config, static_cast<std::uint64_t>(i));
        for (const auto & t : plan.kept) {
            ++kept[static_cast<std::size_t>(t.original_position + 1)];
        }
        total_kept += static_cast<std::int64_t>(plan.kept.size());
    }

    SamplerCheckResult result;
    result.draws = draws;
    result.sigma_bound = sigma_bound;
    result.expected_density = expected_density(config);
    result.measured_density = static_cast<double>(total_kept) / (static_cast<double>(draws) * static_cast<double>(w));
    const auto n = static_cast<double>(draws);
    for (std::int64_t d = 1; d <= w; ++d) {
        SamplerCheckRow row;
        row.distance = d;
        auto it = expected_override.find(d);
        row.expected = it != expected_override.end() ? it->second : retention_probability(d, config);
        row.kept = kept[static_cast<std::size_t>(d)];
        const double mean = n * row.expected;
        const double sd = std::sqrt(n * row.expected * (1.0 - row.expected));
        const double dev = static_cast<double>(row.kept) - mean;
        if (sd > 0.0) {
            row.z = dev / sd;
            row.ok = std::abs(row.z) <= sigma_bound;
        } else {
            row.ok = dev == 0.0;
            row.z = row.ok ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), dev);
        }
        if (!row.ok) {
            result.failures.push_back(d);
        }
        result.rows.push_back(row);
    }
    return result;
}

} // namespace dpad
