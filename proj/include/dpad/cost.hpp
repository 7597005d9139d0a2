#pragma once

#include "dpad/decoder.hpp"
#include "dpad/suffix_plan.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace dpad {

// Suffix key/value slots attended per forward pass, summed over a decode of
// L generated tokens in blocks of B with a fixed number of steps per block.
//   vanilla:  S * sum_{b=1..L/B} (L - bB)
//   dpad:     S * sum_{b=1..L/B} density * min(W, L - bB)
std::int64_t predict_vanilla(std::int64_t gen_len, std::int64_t block_size, std::int64_t steps_per_block);
double predict_dpad(std::int64_t gen_len, std::int64_t block_size, std::int64_t window, double density,
                    std::int64_t steps_per_block);

// Expected kept suffix tokens for one block with `remaining` suffix
// positions, and the variance of that count. Exact under the sampler: for a
// partially filled window this differs from density * remaining.
double expected_kept(std::int64_t remaining, const DropoutConfig & config);
double kept_variance(std::int64_t remaining, const DropoutConfig & config);

// Exact expectation of predict_dpad's quantity under `config`.
double expected_dpad_visits(std::int64_t gen_len, std::int64_t block_size, const DropoutConfig & config,
                            std::int64_t steps_per_block);

struct CostModelInput {
    std::int64_t gen_len = 0;
    std::int64_t block_size = 32;
    std::optional<DropoutConfig> dropout;
    // Fixed steps per block; nullopt takes the realized count from the trace
    // (threshold-parallel decoding).
    std::optional<std::int64_t> steps_per_block;
};

struct BlockCost {
    std::int64_t block = 0;
    std::int64_t steps = 0;
    std::int64_t suffix_length = 0;
    std::int64_t measured = 0;
    double expected = 0.0;     // exact expectation
    double variance = 0.0;
    double closed_form = 0.0;  // density * min(W, remaining) per step
};

struct CostReport {
    std::string schedule;
    std::vector<BlockCost> blocks;
    std::int64_t measured_total = 0;
    double expected_total = 0.0;
    double stddev = 0.0;
    double closed_form_total = 0.0;
    std::int64_t vanilla_total = 0;  // same realized steps, full suffix
    bool deterministic = false;
    bool exact_match = false;  // deterministic schedules only
    double z_score = 0.0;      // stochastic schedules only
};

std::string schedule_name(const DecodePolicy & policy, bool dropout);

// Throws ReconciliationError when the trace was not produced under `input`
// or its counters are internally inconsistent.
CostReport reconcile(const DecodeTrace & trace, const CostModelInput & input);

nlohmann::ordered_json cost_report_json(const CostReport & report);

struct PredictionSummary {
    std::int64_t gen_len = 0;
    std::int64_t block_size = 0;
    std::int64_t window = 0;
    double density = 0.0;
    std::int64_t steps_per_block = 1;
    std::int64_t vanilla = 0;
    double dpad = 0.0;
    double ratio = 0.0;
    // Largest single-block dpad cost; constant in L once L - B >= W.
    double dpad_max_block_cost = 0.0;
};

PredictionSummary summarize_prediction(std::int64_t gen_len, std::int64_t block_size, std::int64_t window,
                                       double density, std::int64_t steps_per_block);
nlohmann::ordered_json prediction_json(const PredictionSummary & summary);

std::string sweep_csv(const std::vector<PredictionSummary> & rows);

} // namespace dpad
