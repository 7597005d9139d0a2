#include "dpad/cost.hpp"

#include "dpad/error.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace dpad {

namespace {

void check_grid(std::int64_t gen_len, std::int64_t block_size, std::int64_t steps_per_block) {
    if (block_size < 1 || gen_len < 0 || gen_len % block_size != 0) {
        throw ConfigError("block_size " + std::to_string(block_size) + " must divide gen_len " +
                          std::to_string(gen_len));
    }
    if (steps_per_block < 1) {
        throw ConfigError("steps_per_block must be at least 1");
    }
}

} // namespace

std::int64_t predict_vanilla(std::int64_t gen_len, std::int64_t block_size, std::int64_t steps_per_block) {
    check_grid(gen_len, block_size, steps_per_block);
    std::int64_t total = 0;
    for (std::int64_t b = 1; b <= gen_len / block_size; ++b) {
        total += gen_len - b * block_size;
    }
    return steps_per_block * total;
}

double predict_dpad(std::int64_t gen_len, std::int64_t block_size, std::int64_t window, double density,
                    std::int64_t steps_per_block) {
    check_grid(gen_len, block_size, steps_per_block);
    if (window < 1) {
        throw ConfigError("window must be at least 1");
    }
    if (!(density > 0.0 && density <= 1.0)) {
        throw ConfigError("density must lie in (0, 1]");
    }
    double total = 0.0;
    for (std::int64_t b = 1; b <= gen_len / block_size; ++b) {
        total += density * static_cast<double>(std::min(window, gen_len - b * block_size));
    }
    return static_cast<double>(steps_per_block) * total;
}

double expected_kept(std::int64_t remaining, const DropoutConfig & config) {
    double sum = 0.0;
    for (std::int64_t d = 1; d <= std::min(remaining, config.window_w); ++d) {
        sum += retention_probability(d, config);
    }
    return sum;
}

double kept_variance(std::int64_t remaining, const DropoutConfig & config) {
    double sum = 0.0;
    for (std::int64_t d = 1; d <= std::min(remaining, config.window_w); ++d) {
        const double p = retention_probability(d, config);
        sum += p * (1.0 - p);
    }
    return sum;
}

double expected_dpad_visits(std::int64_t gen_len, std::int64_t block_size, const DropoutConfig & config,
                            std::int64_t steps_per_block) {
    check_grid(gen_len, block_size, steps_per_block);
    config.validate();
    double total = 0.0;
    for (std::int64_t b = 1; b <= gen_len / block_size; ++b) {
        total += expected_kept(gen_len - b * block_size, config);
    }
    return static_cast<double>(steps_per_block) * total;
}

std::string schedule_name(const DecodePolicy & policy, bool dropout) {
    std::string name = dropout ? "dpad" : "vanilla";
    if (policy.mode == UnmaskMode::threshold_parallel) {
        name += "_parallel";
    }
    if (policy.use_prefix_cache) {
        name += "_cache";
    }
    if (policy.early_termination) {
        name += "_early_term";
    }
    return name;
}

CostReport reconcile(const DecodeTrace & trace, const CostModelInput & input) {
    auto mismatch = [](const std::string & what) { throw ReconciliationError("reconcile: " + what); };
    if (trace.gen_len != input.gen_len) {
        mismatch("trace gen_len " + std::to_string(trace.gen_len) + " != predicted " + std::to_string(input.gen_len));
    }
    if (trace.policy.block_size != input.block_size) {
        mismatch("trace block_size " + std::to_string(trace.policy.block_size) + " != predicted " +
                 std::to_string(input.block_size));
    }
    if (trace.dropout.has_value() != input.dropout.has_value() ||
        (trace.dropout && !(*trace.dropout == *input.dropout))) {
        mismatch("dropout configuration differs between trace and prediction");
    }
    if (input.block_size < 1 || input.gen_len % input.block_size != 0) {
        mismatch("block_size must divide gen_len");
    }

    const std::int64_t n_blocks = input.gen_len / input.block_size;
    CostReport report;
    report.schedule = schedule_name(trace.policy, trace.dropout.has_value());
    report.blocks.resize(static_cast<std::size_t>(n_blocks));
    for (std::int64_t b = 0; b < n_blocks; ++b) {
        auto & bc = report.blocks[static_cast<std::size_t>(b)];
        bc.block = b;
        bc.suffix_length = input.gen_len - (b + 1) * input.block_size;
    }

    std::int64_t step_sum = 0;
    for (const auto & step : trace.steps) {
        if (step.block < 0 || step.block >= n_blocks) {
            mismatch("step record refers to block " + std::to_string(step.block));
        }
        auto & bc = report.blocks[static_cast<std::size_t>(step.block)];
        ++bc.steps;
        bc.measured += step.live_suffix_count;
        step_sum += step.live_suffix_count;
    }
    if (step_sum != trace.totals.suffix_key_visits) {
        mismatch("per-step live_suffix_count sums to " + std::to_string(step_sum) + " but totals report " +
                 std::to_string(trace.totals.suffix_key_visits));
    }

    const double density = input.dropout ? expected_density(*input.dropout) : 1.0;
    double variance = 0.0;
    for (auto & bc : report.blocks) {
        if (input.steps_per_block && bc.steps != 0 && bc.steps != *input.steps_per_block) {
            mismatch("block " + std::to_string(bc.block) + " took " + std::to_string(bc.steps) +
                     " steps, prediction assumes " + std::to_string(*input.steps_per_block));
        }
        const auto steps = static_cast<double>(bc.steps);
        if (input.dropout) {
            bc.expected = steps * expected_kept(bc.suffix_length, *input.dropout);
            bc.variance = steps * steps * kept_variance(bc.suffix_length, *input.dropout);
            bc.closed_form =
                steps * density * static_cast<double>(std::min(input.dropout->window_w, bc.suffix_length));
        } else {
            bc.expected = steps * static_cast<double>(bc.suffix_length);
            bc.closed_form = bc.expected;
        }
        report.measured_total += bc.measured;
        report.expected_total += bc.expected;
        report.closed_form_total += bc.closed_form;
        report.vanilla_total += bc.steps * bc.suffix_length;
        variance += bc.variance;
    }
    report.stddev = std::sqrt(variance);
    report.deterministic = variance == 0.0;
    if (report.deterministic) {
        report.exact_match = static_cast<double>(report.measured_total) == report.expected_total;
    } else {
        report.z_score = (static_cast<double>(report.measured_total) - report.expected_total) / report.stddev;
    }
    return report;
}

nlohmann::ordered_json cost_report_json(const CostReport & report) {
    nlohmann::ordered_json blocks = nlohmann::ordered_json::array();
    for (const auto & b : report.blocks) {
        blocks.push_back({{"block", b.block},
                          {"steps", b.steps},
                          {"suffix_length", b.suffix_length},
                          {"measured", b.measured},
                          {"expected", b.expected},
                          {"variance", b.variance},
                          {"closed_form", b.closed_form}});
    }
    nlohmann::ordered_json j;
    j["schedule"] = report.schedule;
    j["measured_total"] = report.measured_total;
    j["expected_total"] = report.expected_total;
    j["stddev"] = report.stddev;
    j["closed_form_total"] = report.closed_form_total;
    j["vanilla_total"] = report.vanilla_total;
    j["deterministic"] = report.deterministic;
    j["exact_match"] = report.exact_match;
    j["z_score"] = report.z_score;
    j["blocks"] = blocks;
    return j;
}

PredictionSummary summarize_prediction(std::int64_t gen_len, std::int64_t block_size, std::int64_t window,
                                       double density, std::int64_t steps_per_block) {
    PredictionSummary s;
    s.gen_len = gen_len;
    s.block_size = block_size;
    s.window = window;
    s.density = density;
    s.steps_per_block = steps_per_block;
    s.vanilla = predict_vanilla(gen_len, block_size, steps_per_block);
    s.dpad = predict_dpad(gen_len, block_size, window, density, steps_per_block);
    s.ratio = s.dpad > 0.0 ? static_cast<double>(s.vanilla) / s.dpad : 1.0;
    if (gen_len > block_size) {
        s.dpad_max_block_cost = static_cast<double>(steps_per_block) * density *
                                static_cast<double>(std::min(window, gen_len - block_size));
    }
    return s;
}

nlohmann::ordered_json prediction_json(const PredictionSummary & s) {
    return {{"L", s.gen_len},
            {"B", s.block_size},
            {"W", s.window},
            {"density", s.density},
            {"steps_per_block", s.steps_per_block},
            {"vanilla", s.vanilla},
            {"dpad", s.dpad},
            {"ratio", s.ratio},
            {"dpad_max_block_cost", s.dpad_max_block_cost}};
}

std::string sweep_csv(const std::vector<PredictionSummary> & rows) {
    std::ostringstream out;
    out.precision(17);
    out << "L,B,W,density,steps_per_block,vanilla,dpad,ratio,dpad_max_block_cost\n";
    for (const auto & r : rows) {
        out << r.gen_len << ',' << r.block_size << ',' << r.window << ',' << r.density << ',' << r.steps_per_block
            << ',' << r.vanilla << ',' << r.dpad << ',' << r.ratio << ',' << r.dpad_max_block_cost << '\n';
    }
    return out.str();
}

} // namespace dpad
