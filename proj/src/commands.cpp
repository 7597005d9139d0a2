#include "dpad/commands.hpp"

#include "dpad/analysis.hpp"
#include "dpad/cost.hpp"
#include "dpad/decoder.hpp"
#include "dpad/error.hpp"
#include "dpad/run_config.hpp"
#include "dpad/serialization.hpp"

#include <fstream>
#include <numeric>
#include <ostream>
#include <regex>
#include <sstream>

namespace dpad {

namespace {

using nlohmann::ordered_json;
namespace fs = std::filesystem;

// Write-then-rename so a reader never sees a partial file.
void write_atomic(const fs::path & path, const std::string & content) {
    fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error("cannot write " + tmp.string());
        }
        out << content;
        if (!out) {
            throw Error("short write to " + tmp.string());
        }
    }
    fs::rename(tmp, path);
}

void write_json(const fs::path & path, const ordered_json & j) {
    write_atomic(path, j.dump(2) + "\n");
}

RunConfig load_with_overrides(const CliOptions & options) {
    RunConfig cfg = load_run_config(options.config);
    if (options.seed) {
        cfg.seed = *options.seed;
    }
    if (options.preset) {
        preset(*options.preset);
        cfg.dropout = DropoutChoice{DropoutChoice::Kind::preset, {}, *options.preset};
        cfg.policy.use_suffix_dropout = true;
    }
    if (options.out_dir) {
        cfg.out_dir = options.out_dir->string();
    }
    return cfg;
}

std::optional<DropoutConfig> active_dropout(const RunConfig & cfg, const DecodePolicy & policy,
                                            const DropoutChoice & choice) {
    return policy.use_suffix_dropout ? cfg.resolve(choice) : std::nullopt;
}

ordered_json decode_json(const DecodeResult & r) {
    ordered_json j;
    j["tokens"] = r.tokens;
    j["generated"] = std::vector<TokenId>(r.tokens.begin() + r.trace.prompt_len, r.tokens.end());
    j["trace"] = r.trace;
    return j;
}

int cmd_decode(const RunConfig & cfg, std::ostream & out) {
    const Model model = init_model(cfg.model);
    const auto prompt = cfg.prompt_tokens();
    const DecodeResult r = decode(model, prompt, cfg.gen_len, cfg.policy, active_dropout(cfg, cfg.policy, cfg.dropout));
    const fs::path path = fs::path(cfg.out_dir) / "trace.json";
    write_json(path, decode_json(r));
    const auto & t = r.trace.totals;
    out << "decode: steps=" << t.steps << " forward_passes=" << t.forward_passes
        << " suffix_key_visits=" << t.suffix_key_visits << " generated_length=" << t.generated_length
        << " blocks_decoded=" << t.blocks_decoded << (t.terminated_early ? " terminated_early" : "") << "\n";
    out << "wrote " << path.string() << "\n";
    return kExitOk;
}

int cmd_compare(const RunConfig & cfg, std::ostream & out) {
    const Model model = init_model(cfg.model);
    const auto prompt = cfg.prompt_tokens();
    ordered_json report;
    std::vector<DecodeResult> results;
    for (const CompareSide * side : {&cfg.compare.a, &cfg.compare.b}) {
        ordered_json pj = cfg.policy;
        pj.merge_patch(side->policy_patch);
        DecodePolicy policy = pj.get<DecodePolicy>();
        const DropoutChoice choice = side->dropout.value_or(cfg.dropout);
        if (side->dropout && !side->policy_patch.contains("use_suffix_dropout")) {
            policy.use_suffix_dropout = choice.kind != DropoutChoice::Kind::none;
        }
        if (policy.use_suffix_dropout && choice.kind == DropoutChoice::Kind::none) {
            throw ConfigError("compare side enables suffix dropout without a dropout config");
        }
        results.push_back(decode(model, prompt, cfg.gen_len, policy, active_dropout(cfg, policy, choice)));
    }
    const auto & ta = results[0].tokens;
    const auto & tb = results[1].tokens;
    std::optional<std::size_t> diverge;
    for (std::size_t i = 0; i < std::min(ta.size(), tb.size()); ++i) {
        if (ta[i] != tb[i]) {
            diverge = i;
            break;
        }
    }
    if (!diverge && ta.size() != tb.size()) {
        diverge = std::min(ta.size(), tb.size());
    }
    const bool identical = !diverge;
    report["expect"] = cfg.compare.expect_identical ? "identical" : "may-differ";
    report["identical"] = identical;
    report["first_divergence"] = diverge ? ordered_json(*diverge) : ordered_json(nullptr);
    report["a"] = decode_json(results[0]);
    report["b"] = decode_json(results[1]);
    const fs::path path = fs::path(cfg.out_dir) / "compare.json";
    write_json(path, report);
    if (identical) {
        out << "compare: identical\n";
    } else {
        out << "compare: first divergence at position " << *diverge << "\n";
    }
    out << "wrote " << path.string() << "\n";
    if (cfg.compare.expect_identical && !identical) {
        return kExitRuntime;
    }
    return kExitOk;
}

int cmd_analyze(const RunConfig & cfg, std::ostream & out) {
    const Model model = init_model(cfg.model);
    const auto & spec = cfg.analyze;
    DecodePolicy policy = cfg.policy;
    policy.early_termination = false;
    const auto dropout = active_dropout(cfg, policy, cfg.dropout);
    const std::size_t layer = spec.layer.value_or(static_cast<std::size_t>(cfg.model.n_layers) - 1);

    std::vector<AttentionSample> samples;
    std::optional<SequenceState> first_state;
    for (std::int64_t i = 0; i < spec.samples; ++i) {
        const auto prompt = cfg.prompt_tokens(static_cast<std::uint64_t>(i));
        SequenceState state = state_before_block(model, prompt, cfg.gen_len, policy, dropout, spec.block);
        std::vector<Position> positions(static_cast<std::size_t>(state.size()));
        std::iota(positions.begin(), positions.end(), Position{0});
        const ForwardOutput fo = model.forward(state.tokens, positions, nullptr, {.capture_attention = true});
        samples.push_back(sample_from_forward(fo, layer, spec.head, state.block_begin(spec.block),
                                              state.block_end(spec.block)));
        if (!first_state) {
            first_state = std::move(state);
        }
    }
    const DistanceProfile profile = distance_profile(samples, spec.alignment);
    const fs::path dir(cfg.out_dir);
    write_atomic(dir / "distance_profile.csv", profile_csv(profile));

    SpikePruneOptions sp;
    sp.top_n = spec.top_n;
    sp.exclusion_prefix = spec.exclusion_prefix;
    sp.layer = layer;
    sp.head = spec.head;
    sp.alignment = spec.alignment;
    const SpikePruneResult spike = spike_prune_experiment(model, *first_state, sp);
    write_json(dir / "spike_prune.json", spike_prune_json(spike, sp));
    write_atomic(dir / "spike_before.csv", profile_csv(spike.before));
    write_atomic(dir / "spike_after.csv", profile_csv(spike.after));

    out << "analyze: samples=" << profile.sample_count << " skipped=" << profile.skipped
        << " profile_rows=" << profile.rows.size() << " pruned=" << spike.pruned_positions.size() << "/"
        << spike.eligible << " eligible\n";
    out << "wrote " << (dir / "distance_profile.csv").string() << ", " << (dir / "spike_prune.json").string() << "\n";
    return kExitOk;
}

int cmd_sampler_check(const RunConfig & cfg, std::ostream & out, std::ostream & err) {
    const auto dropout = cfg.resolved_dropout();
    if (!dropout) {
        throw ConfigError("sampler-check needs a dropout config or preset");
    }
    const auto & spec = cfg.sampler_check;
    const SamplerCheckResult r = check_sampler(*dropout, spec.draws, spec.sigma_bound, spec.expected_override);

    std::ostringstream csv;
    csv.precision(17);
    csv << "distance,expected,kept,draws,frequency,z,ok\n";
    for (const auto & row : r.rows) {
        csv << row.distance << ',' << row.expected << ',' << row.kept << ',' << r.draws << ','
            << static_cast<double>(row.kept) / static_cast<double>(r.draws) << ',' << row.z << ','
            << (row.ok ? 1 : 0) << '\n';
    }
    const fs::path dir(cfg.out_dir);
    write_atomic(dir / "sampler_check.csv", csv.str());
    ordered_json summary;
    summary["dropout"] = *dropout;
    summary["draws"] = r.draws;
    summary["sigma_bound"] = r.sigma_bound;
    summary["expected_density"] = r.expected_density;
    summary["measured_density"] = r.measured_density;
    summary["pass"] = r.pass();
    summary["failures"] = r.failures;
    write_json(dir / "sampler_check.json", summary);

    out.precision(6);
    out << std::fixed << "sampler-check: density expected=" << r.expected_density
        << " measured=" << r.measured_density << " draws=" << r.draws << (r.pass() ? " pass" : " FAIL") << "\n";
    out.unsetf(std::ios::floatfield);
    if (!r.pass()) {
        err << "sampler-check: distances outside " << r.sigma_bound << " sigma:";
        for (auto d : r.failures) {
            err << ' ' << d;
        }
        err << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}

int cmd_cost(const RunConfig & cfg, std::ostream & out) {
    const auto & spec = cfg.cost;
    const fs::path dir(cfg.out_dir);
    const auto dropout = cfg.resolved_dropout();
    if (spec.is_sweep()) {
        std::vector<PredictionSummary> rows;
        for (auto l : spec.sweep_gen_len) {
            for (auto b : spec.sweep_block_size) {
                for (auto w : spec.sweep_window) {
                    for (auto d : spec.sweep_density) {
                        rows.push_back(summarize_prediction(l, b, w, d, spec.steps_per_block));
                    }
                }
            }
        }
        write_atomic(dir / "cost_sweep.csv", sweep_csv(rows));
        out << "cost: sweep rows=" << rows.size() << "\nwrote " << (dir / "cost_sweep.csv").string() << "\n";
        return kExitOk;
    }

    const std::int64_t gen_len = spec.gen_len.value_or(cfg.gen_len);
    const std::int64_t block = spec.block_size.value_or(cfg.policy.block_size);
    if (!spec.window && !dropout) {
        throw ConfigError("cost: W is required when no dropout config or preset is given");
    }
    const std::int64_t window = spec.window.value_or(dropout ? dropout->window_w : 0);
    const double density = spec.density ? *spec.density : expected_density(*dropout);
    const PredictionSummary summary = summarize_prediction(gen_len, block, window, density, spec.steps_per_block);

    ordered_json report;
    report["prediction"] = prediction_json(summary);
    if (spec.trace) {
        std::ifstream in(*spec.trace);
        if (!in) {
            throw ConfigError("cost.trace: cannot read " + *spec.trace);
        }
        ordered_json tj;
        try {
            tj = ordered_json::parse(in);
        } catch (const nlohmann::json::exception & e) {
            throw ConfigError("cost.trace: " + std::string(e.what()));
        }
        const DecodeTrace trace = (tj.contains("trace") ? tj.at("trace") : tj).get<DecodeTrace>();
        CostModelInput input;
        input.gen_len = gen_len;
        input.block_size = block;
        input.dropout = cfg.policy.use_suffix_dropout ? dropout : std::nullopt;
        if (cfg.policy.mode == UnmaskMode::topk) {
            input.steps_per_block = cfg.policy.steps_per_block;
        }
        report["reconciliation"] = cost_report_json(reconcile(trace, input));
    }
    write_json(dir / "cost_report.json", report);
    out << "cost: vanilla=" << summary.vanilla << " dpad=" << summary.dpad << " ratio=" << summary.ratio << "\n";
    out << "wrote " << (dir / "cost_report.json").string() << "\n";
    return kExitOk;
}

// "path: error: msg", or "path:line:col: error: msg" when the message
// starts with a location.
void report(std::ostream & err, const std::string & where, const char * kind, const std::string & what) {
    static const std::regex located(R"(^(\d+:\d+): (.*)$)");
    std::smatch m;
    if (std::regex_match(what, m, located)) {
        err << where << ':' << m[1] << ": " << kind << ": " << m[2] << "\n";
    } else {
        err << where << ": " << kind << ": " << what << "\n";
    }
}

} // namespace

int run_command(Command command, const CliOptions & options, std::ostream & out, std::ostream & err) {
    const std::string where = options.config.string();
    try {
        const RunConfig cfg = load_with_overrides(options);
        switch (command) {
        case Command::decode:
            return cmd_decode(cfg, out);
        case Command::compare:
            return cmd_compare(cfg, out);
        case Command::analyze:
            return cmd_analyze(cfg, out);
        case Command::sampler_check:
            return cmd_sampler_check(cfg, out, err);
        case Command::cost:
            return cmd_cost(cfg, out);
        }
    } catch (const ConfigError & e) {
        report(err, where, "error", e.what());
        return kExitConfig;
    } catch (const LookupError & e) {
        report(err, where, "error", e.what());
        return kExitConfig;
    } catch (const std::exception & e) {
        report(err, where, "runtime error", e.what());
        return kExitRuntime;
    }
    return kExitRuntime;
}

} // namespace dpad
