#include "dpad/cost.hpp"
#include "dpad/decoder.hpp"
#include "dpad/error.hpp"
#include "fixtures.hpp"

#include <doctest.h>

using namespace dpad;
using namespace dpad::fixtures;

namespace {

// Sum over blocks of the suffix length seen by each block, counted key by key.
std::int64_t count_vanilla(std::int64_t l, std::int64_t b, std::int64_t s) {
    std::int64_t n = 0;
    for (std::int64_t block = 0; block < l / b; ++block) {
        for (std::int64_t pos = (block + 1) * b; pos < l; ++pos) {
            n += s;
        }
    }
    return n;
}

DecodePolicy tiny_policy(std::int64_t block, std::int64_t steps) {
    DecodePolicy p;
    p.block_size = block;
    p.steps_per_block = steps;
    return p;
}

} // namespace

TEST_CASE("vanilla prediction") {
    CHECK(predict_vanilla(1024, 32, 1) == 15872);
    CHECK(predict_vanilla(1024, 32, 1) == count_vanilla(1024, 32, 1));
    CHECK(predict_vanilla(32, 32, 1) == 0);
    CHECK(predict_vanilla(64, 32, 1) == 32);
    CHECK(predict_vanilla(256, 16, 4) == count_vanilla(256, 16, 4));
    CHECK_THROWS_AS(predict_vanilla(100, 32, 1), ConfigError);
    CHECK_THROWS_AS(predict_vanilla(64, 32, 0), ConfigError);
}

TEST_CASE("dpad prediction") {
    CHECK(predict_dpad(1024, 32, 256, 0.25, 1) == doctest::Approx(1760.0).epsilon(1e-12));
    CHECK(15872.0 / predict_dpad(1024, 32, 256, 0.25, 1) == doctest::Approx(9.0).epsilon(0.01));
    CHECK(predict_dpad(1024, 32, 32, 1.0, 1) == 992.0);
    CHECK(predict_dpad(512, 32, 512, 1.0, 3) == static_cast<double>(predict_vanilla(512, 32, 3)));
    CHECK_THROWS_AS(predict_dpad(1024, 32, 0, 0.25, 1), ConfigError);
    CHECK_THROWS_AS(predict_dpad(1024, 32, 64, 0.0, 1), ConfigError);
    CHECK_THROWS_AS(predict_dpad(1024, 32, 64, 1.5, 1), ConfigError);
}

TEST_CASE("dpad never exceeds vanilla") {
    for (std::int64_t l : {64, 256, 1024}) {
        for (std::int64_t b : {8, 32}) {
            for (std::int64_t w : {1, 16, 128, 2048}) {
                for (double d : {0.1, 0.5, 1.0}) {
                    const double dp = predict_dpad(l, b, w, d, 2);
                    const auto va = static_cast<double>(predict_vanilla(l, b, 2));
                    CHECK(dp <= va);
                    if (d == 1.0 && w >= l - b) {
                        CHECK(dp == va);
                    } else if (va > 0) {
                        CHECK(dp < va);
                    }
                }
            }
        }
    }
}

TEST_CASE("per-block cost is bounded by the window") {
    double first = -1.0;
    for (std::int64_t l : {256, 512, 1024, 2048, 4096}) {
        const PredictionSummary s = summarize_prediction(l, 32, 128, 0.25, 1);
        if (first < 0) {
            first = s.dpad_max_block_cost;
        }
        CHECK(s.dpad_max_block_cost == first);
        CHECK(s.dpad_max_block_cost == 0.25 * 128);
    }
    // Extra blocks beyond the window each add exactly density * W.
    const double d1 = predict_dpad(1024, 32, 128, 0.25, 1);
    const double d2 = predict_dpad(2048, 32, 128, 0.25, 1);
    CHECK(d2 - d1 == doctest::Approx(32 * 0.25 * 128));
    CHECK(summarize_prediction(64, 64, 512, 1.0, 1).ratio == 1.0);
    CHECK(summarize_prediction(256, 32, 512, 1.0, 1).ratio == 1.0);
}

TEST_CASE("exact expectation of a stochastic schedule") {
    const DropoutConfig c = preset("LLaDA-Instruct/GSM8K");
    double direct = 0.0;
    for (std::int64_t b = 1; b < 32; ++b) {
        const std::int64_t rem = 1024 - 32 * b;
        for (std::int64_t d = 1; d <= std::min<std::int64_t>(256, rem); ++d) {
            direct += retention_probability(d, c);
        }
    }
    CHECK(expected_dpad_visits(1024, 32, c, 1) == doctest::Approx(direct).epsilon(1e-12));
    CHECK(expected_kept(1000, c) == doctest::Approx(256 * expected_density(c)).epsilon(1e-12));
    CHECK(expected_kept(0, c) == 0.0);
    CHECK(kept_variance(10, DropoutConfig::retain_all(64)) == 0.0);
}

TEST_CASE("reconcile retain-all trace exactly") {
    const Model m = init_model(small_config(4, 32, 8, 1, 1));
    DecodePolicy p = tiny_policy(8, 2);
    p.use_suffix_dropout = true;
    const DropoutConfig all = DropoutConfig::retain_all(4096, 3);
    const DecodeResult r = decode(m, random_prompt(1, 4, 32), 64, p, all);
    CostModelInput in;
    in.gen_len = 64;
    in.block_size = 8;
    in.dropout = all;
    in.steps_per_block = 2;
    const CostReport rep = reconcile(r.trace, in);
    CHECK(rep.deterministic);
    CHECK(rep.exact_match);
    CHECK(rep.measured_total == predict_vanilla(64, 8, 2));
    CHECK(rep.vanilla_total == predict_vanilla(64, 8, 2));
    CHECK(rep.schedule == "dpad");

    const DecodeResult plain = decode(m, random_prompt(1, 4, 32), 64, tiny_policy(8, 2), std::nullopt);
    in.dropout.reset();
    const CostReport rv = reconcile(plain.trace, in);
    CHECK(rv.exact_match);
    CHECK(rv.schedule == "vanilla");
}

TEST_CASE("reconcile counts only decoded blocks after early termination") {
    const Model inner = init_model(small_config(5, 32, 8, 1, 1));
    DecodePolicy p = tiny_policy(8, 2);
    p.early_termination = true;
    const EosForcing forced(inner, 4 + 16, 4 + 24, p.eos_id);
    const DecodeResult r = decode(forced, random_prompt(2, 4, 32), 64, p, std::nullopt);
    REQUIRE(r.trace.totals.blocks_decoded == 3);
    CostModelInput in;
    in.gen_len = 64;
    in.block_size = 8;
    in.steps_per_block = 2;
    const CostReport rep = reconcile(r.trace, in);
    CHECK(rep.exact_match);
    CHECK(rep.measured_total == 2 * (56 + 48 + 40));
    for (const auto & b : rep.blocks) {
        CHECK(b.measured == (b.block <= 2 ? 2 * b.suffix_length : 0));
    }
    CHECK(rep.schedule == "vanilla_early_term");
}

TEST_CASE("reconcile rejects mismatched inputs") {
    const Model m = init_model(small_config(6, 32, 8, 1, 1));
    const DecodeResult r = decode(m, random_prompt(1, 4, 32), 32, tiny_policy(8, 2), std::nullopt);
    CostModelInput in;
    in.gen_len = 32;
    in.block_size = 8;
    CHECK_NOTHROW(reconcile(r.trace, in));

    CostModelInput wrong = in;
    wrong.gen_len = 64;
    CHECK_THROWS_AS(reconcile(r.trace, wrong), ReconciliationError);
    wrong = in;
    wrong.steps_per_block = 4;
    CHECK_THROWS_AS(reconcile(r.trace, wrong), ReconciliationError);
    wrong = in;
    wrong.dropout = DropoutConfig::retain_all(8);
    CHECK_THROWS_AS(reconcile(r.trace, wrong), ReconciliationError);

    DecodeTrace tampered = r.trace;
    tampered.totals.suffix_key_visits += 1;
    CHECK_THROWS_AS(reconcile(tampered, in), ReconciliationError);
}

TEST_CASE("stochastic trace lands near its expectation") {
    const Model m = init_model(small_config(7, 32, 8, 1, 1));
    DecodePolicy p = tiny_policy(16, 1);
    p.use_suffix_dropout = true;
    DropoutConfig d = preset("LLaDA-Instruct/GSM8K");
    d.window_w = 64;
    d.rng_seed = 12;
    const DecodeResult r = decode(m, random_prompt(1, 4, 32), 256, p, d);
    CostModelInput in;
    in.gen_len = 256;
    in.block_size = 16;
    in.dropout = d;
    in.steps_per_block = 1;
    const CostReport rep = reconcile(r.trace, in);
    CHECK_FALSE(rep.deterministic);
    CHECK(rep.expected_total == doctest::Approx(expected_dpad_visits(256, 16, d, 1)));
    CHECK(std::abs(rep.z_score) < 5.0);
    CHECK(rep.measured_total < rep.vanilla_total);
}

TEST_CASE("sweep csv layout") {
    std::vector<PredictionSummary> rows;
    for (std::int64_t l : {256, 512}) {
        rows.push_back(summarize_prediction(l, 32, 128, 0.25, 1));
    }
    const std::string csv = sweep_csv(rows);
    CHECK(csv.rfind("L,B,W,density,steps_per_block,vanilla,dpad,ratio,dpad_max_block_cost\n", 0) == 0);
    CHECK(csv.find("\n256,32,128,0.25,1,") != std::string::npos);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}
