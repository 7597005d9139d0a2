#include "dpad/decoder.hpp"

#include "dpad/error.hpp"
#include "dpad/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace dpad {

std::string_view to_string(UnmaskMode mode) {
    return mode == UnmaskMode::topk ? "topk" : "threshold_parallel";
}

UnmaskMode unmask_mode_from_string(std::string_view name) {
    if (name == "topk") {
        return UnmaskMode::topk;
    }
    if (name == "threshold_parallel") {
        return UnmaskMode::threshold_parallel;
    }
    throw ConfigError("unknown unmask mode '" + std::string(name) + "' (expected topk or threshold_parallel)");
}

std::string_view to_string(CacheRefresh refresh) {
    return refresh == CacheRefresh::per_block ? "per_block" : "per_step";
}

CacheRefresh cache_refresh_from_string(std::string_view name) {
    if (name == "per_block") {
        return CacheRefresh::per_block;
    }
    if (name == "per_step") {
        return CacheRefresh::per_step;
    }
    throw ConfigError("unknown cache refresh policy '" + std::string(name) + "' (expected per_block or per_step)");
}

void DecodePolicy::validate(int vocab_size) const {
    if (block_size < 1) {
        throw ConfigError("block_size must be at least 1, got " + std::to_string(block_size));
    }
    if (mode == UnmaskMode::topk && (steps_per_block < 1 || steps_per_block > block_size)) {
        throw ConfigError("steps_per_block " + std::to_string(steps_per_block) + " must lie in [1, block_size " +
                          std::to_string(block_size) + "]");
    }
    if (!(confidence_threshold > 0.0 && confidence_threshold <= 1.0)) {
        throw ConfigError("confidence_threshold must lie in (0, 1]");
    }
    if (mask_id < 0 || mask_id >= vocab_size || eos_id < 0 || eos_id >= vocab_size) {
        throw ConfigError("mask_id and eos_id must be inside the vocabulary of size " + std::to_string(vocab_size));
    }
    if (mask_id == eos_id) {
        throw ConfigError("mask_id and eos_id must differ");
    }
}

std::vector<std::int64_t> DecodePolicy::unmask_schedule() const {
    const std::int64_t base = block_size / steps_per_block;
    const std::int64_t rem = block_size % steps_per_block;
    std::vector<std::int64_t> ks(static_cast<std::size_t>(steps_per_block), base);
    for (std::int64_t i = 0; i < rem; ++i) {
        ++ks[static_cast<std::size_t>(i)];
    }
    return ks;
}

std::int64_t SequenceState::masked_in(Position begin, Position end) const {
    std::int64_t n = 0;
    for (Position p = std::max<Position>(begin, 0); p < std::min<Position>(end, size()); ++p) {
        n += masked[static_cast<std::size_t>(p)] != 0;
    }
    return n;
}

SequenceState initial_state(std::span<const TokenId> prompt, std::int64_t gen_len, const DecodePolicy & policy) {
    if (gen_len < 0) {
        throw ConfigError("gen_len must be non-negative");
    }
    if (gen_len % policy.block_size != 0) {
        throw ConfigError("gen_len " + std::to_string(gen_len) + " is not a multiple of block_size " +
                          std::to_string(policy.block_size));
    }
    SequenceState s;
    s.prompt_len = static_cast<std::int64_t>(prompt.size());
    s.gen_len = gen_len;
    s.block_size = policy.block_size;
    s.tokens.assign(prompt.begin(), prompt.end());
    s.tokens.resize(static_cast<std::size_t>(s.size()), policy.mask_id);
    s.masked.assign(static_cast<std::size_t>(s.size()), 0);
    std::fill(s.masked.begin() + s.prompt_len, s.masked.end(), 1);
    return s;
}

SequenceState forward_mask(std::span<const TokenId> clean, std::int64_t prompt_len, double t, std::uint64_t seed,
                           TokenId mask_id) {
    if (!(t >= 0.0 && t <= 1.0)) {
        throw DomainError("mask level t must lie in [0, 1]");
    }
    const auto n = static_cast<std::int64_t>(clean.size());
    if (prompt_len < 0 || prompt_len > n) {
        throw RangeError("prompt_len outside the clean sequence");
    }
    SequenceState s;
    s.prompt_len = prompt_len;
    s.gen_len = n - prompt_len;
    s.block_size = std::max<std::int64_t>(s.gen_len, 1);
    s.tokens.assign(clean.begin(), clean.end());
    s.masked.assign(clean.size(), 0);
    Rng rng(seed);
    for (Position p = prompt_len; p < n; ++p) {
        // u < t so t = 0 never masks and t = 1 always does.
        if (rng.uniform() < t) {
            s.tokens[static_cast<std::size_t>(p)] = mask_id;
            s.masked[static_cast<std::size_t>(p)] = 1;
        }
    }
    return s;
}

double diagnostic_loss(const Denoiser & model, const SequenceState & state, std::span<const TokenId> clean) {
    if (clean.size() != state.tokens.size()) {
        throw ShapeError("diagnostic_loss: clean and state lengths differ");
    }
    std::vector<Position> positions(state.tokens.size());
    std::iota(positions.begin(), positions.end(), Position{0});
    const ForwardOutput out = model.forward(state.tokens, positions, nullptr, {});
    double loss = 0.0;
    for (std::size_t i = 0; i < state.tokens.size(); ++i) {
        if (!state.masked[i]) {
            continue;
        }
        auto row = out.logits.row(i);
        const double mx = *std::max_element(row.begin(), row.end());
        double sum = 0.0;
        for (float v : row) {
            sum += std::exp(static_cast<double>(v) - mx);
        }
        const double log_p = static_cast<double>(row[static_cast<std::size_t>(clean[i])]) - mx - std::log(sum);
        loss -= log_p;
    }
    return loss;
}

std::vector<Position> live_positions(const SequenceState & state, const SuffixPlan * plan, bool prefix_cached) {
    const Position c = state.block_begin(state.current_block);
    const Position s = state.block_end(state.current_block);
    std::vector<Position> out;
    for (Position p = prefix_cached ? c : 0; p < s; ++p) {
        out.push_back(p);
    }
    if (plan != nullptr) {
        for (const auto & t : plan->kept) {
            out.push_back(t.original_position);
        }
    } else {
        for (Position p = s; p < state.size(); ++p) {
            out.push_back(p);
        }
    }
    return out;
}

namespace {

struct Prediction {
    Position position;
    TokenId token;
    double confidence;
};

// Greedy argmax over the vocabulary with the mask id excluded; ties go to
// the lowest token id.
Prediction predict(std::span<const float> logits, TokenId mask_id, Position pos) {
    double mx = -std::numeric_limits<double>::infinity();
    TokenId best = -1;
    for (std::size_t v = 0; v < logits.size(); ++v) {
        if (static_cast<TokenId>(v) == mask_id) {
            continue;
        }
        if (logits[v] > mx) {
            mx = logits[v];
            best = static_cast<TokenId>(v);
        }
    }
    double sum = 0.0;
    for (std::size_t v = 0; v < logits.size(); ++v) {
        if (static_cast<TokenId>(v) != mask_id) {
            sum += std::exp(static_cast<double>(logits[v]) - mx);
        }
    }
    return {pos, best, 1.0 / sum};
}

void check_suffix_plan(const SequenceState & state, const SuffixPlan & plan) {
    const Position s = state.block_end(state.current_block);
    if (plan.window_start != s) {
        throw ContractViolation("suffix plan starts at " + std::to_string(plan.window_start) +
                                " but the suffix boundary is " + std::to_string(s));
    }
    for (const auto & t : plan.kept) {
        if (t.original_position < plan.window_start || t.original_position >= plan.window_end ||
            t.original_position >= state.size()) {
            throw ContractViolation("suffix plan keeps position outside its window");
        }
    }
}

} // namespace

StepRecord step_unmask(const Denoiser & model, SequenceState & state, const DecodePolicy & policy,
                       const SuffixPlan * plan, const PrefixCache * cache) {
    const Position c = state.block_begin(state.current_block);
    const Position s = state.block_end(state.current_block);
    if (state.current_block >= state.block_count() || state.masked_in(c, s) == 0) {
        throw ContractViolation("step_unmask: current block " + std::to_string(state.current_block) +
                                " has no masked positions");
    }
    if (plan != nullptr) {
        check_suffix_plan(state, *plan);
    }
    const bool cached = cache != nullptr && !cache->empty();
    if (cached) {
        const auto & pos = cache->front().positions;
        if (static_cast<Position>(pos.size()) != c || (c > 0 && (pos.front() != 0 || pos.back() != c - 1))) {
            throw CacheConsistencyError("step_unmask: cache does not cover the prefix [0, " + std::to_string(c) + ")");
        }
    }

    const std::vector<Position> positions = live_positions(state, plan, cached);
    std::vector<TokenId> tokens;
    tokens.reserve(positions.size());
    for (Position p : positions) {
        tokens.push_back(state.tokens[static_cast<std::size_t>(p)]);
    }
    const ForwardOutput out = model.forward(tokens, positions, cached ? cache : nullptr, {});

    std::vector<Prediction> candidates;
    for (std::size_t i = 0; i < positions.size(); ++i) {
        const Position p = positions[i];
        if (p >= c && p < s && state.masked[static_cast<std::size_t>(p)]) {
            candidates.push_back(predict(out.logits.row(i), policy.mask_id, p));
        }
    }
    // Highest confidence first, lowest position on ties.
    std::sort(candidates.begin(), candidates.end(), [](const Prediction & a, const Prediction & b) {
        return a.confidence != b.confidence ? a.confidence > b.confidence : a.position < b.position;
    });

    StepRecord rec;
    rec.step = state.step;
    rec.block = state.current_block;
    rec.forward_token_count = static_cast<std::int64_t>(positions.size());
    rec.live_suffix_count = std::count_if(positions.begin(), positions.end(), [s](Position p) { return p >= s; });
    if (cached) {
        rec.cache_hit_positions = cache->front().positions;
    }

    std::size_t take = 0;
    if (policy.mode == UnmaskMode::topk) {
        const auto schedule = policy.unmask_schedule();
        // Steps taken so far in this block follow from how many tokens are gone.
        std::int64_t done = state.block_size - state.masked_in(c, s);
        std::size_t idx = 0;
        while (idx < schedule.size() && done > 0) {
            done -= schedule[idx++];
        }
        const std::int64_t k = idx < schedule.size() ? schedule[idx] : 1;
        take = std::min<std::size_t>(static_cast<std::size_t>(k), candidates.size());
    } else {
        while (take < candidates.size() && candidates[take].confidence >= policy.confidence_threshold) {
            ++take;
        }
        if (take == 0) {
            take = 1;
            rec.fallback = true;
        }
    }

    std::vector<Prediction> chosen(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take));
    std::sort(chosen.begin(), chosen.end(), [](const Prediction & a, const Prediction & b) { return a.position < b.position; });
    for (const auto & pr : chosen) {
        state.tokens[static_cast<std::size_t>(pr.position)] = pr.token;
        state.masked[static_cast<std::size_t>(pr.position)] = 0;
        rec.unmasked_positions.push_back(pr.position);
        rec.unmasked_tokens.push_back(pr.token);
        rec.confidences.push_back(pr.confidence);
    }
    ++state.step;
    return rec;
}

namespace {

struct DecodeRun {
    SequenceState state;
    DecodeTrace trace;
};

void validate_decode(const Denoiser & model, std::span<const TokenId> prompt, std::int64_t gen_len,
                     const DecodePolicy & policy, const std::optional<DropoutConfig> & dropout) {
    policy.validate(model.config().vocab_size);
    if (gen_len % policy.block_size != 0) {
        throw ConfigError("gen_len " + std::to_string(gen_len) + " is not a multiple of block_size " +
                          std::to_string(policy.block_size));
    }
    if (policy.use_suffix_dropout) {
        if (!dropout) {
            throw ConfigError("suffix dropout enabled but no dropout configuration given");
        }
        dropout->validate();
    }
    for (TokenId t : prompt) {
        if (t < 0 || t >= model.config().vocab_size) {
            throw ConfigError("prompt token " + std::to_string(t) + " outside the vocabulary");
        }
    }
}

DecodeRun run_decode(const Denoiser & model, std::span<const TokenId> prompt, std::int64_t gen_len,
                     const DecodePolicy & policy, const std::optional<DropoutConfig> & dropout,
                     const DecodeOptions & options) {
    validate_decode(model, prompt, gen_len, policy, dropout);
    DecodeRun run;
    run.state = initial_state(prompt, gen_len, policy);
    auto & state = run.state;
    auto & trace = run.trace;
    trace.prompt_len = state.prompt_len;
    trace.gen_len = gen_len;
    trace.policy = policy;
    if (policy.use_suffix_dropout) {
        trace.dropout = dropout;
    }

    const std::int64_t n_blocks = state.block_count();
    for (std::int64_t b = 0; b < n_blocks; ++b) {
        if (options.stop_before_block && b >= *options.stop_before_block) {
            break;
        }
        state.current_block = b;
        const Position c = state.block_begin(b);
        const Position s = state.block_end(b);

        std::optional<SuffixPlan> plan;
        if (policy.use_suffix_dropout) {
            plan = sample_plan(s, state.size(), *dropout, static_cast<std::uint64_t>(b));
        }
        const SuffixPlan * plan_ptr = plan ? &*plan : nullptr;

        BlockRecord block;
        block.block = b;
        block.suffix_length = state.size() - s;
        block.window_start = s;
        block.window_end = plan ? plan->window_end : state.size();
        block.kept_suffix = plan ? static_cast<std::int64_t>(plan->kept.size()) : block.suffix_length;

        PrefixCache cache;
        std::int64_t step_in_block = 0;
        while (state.masked_in(c, s) > 0) {
            bool refreshed = false;
            if (policy.use_prefix_cache && c > 0 &&
                (step_in_block == 0 || policy.cache_refresh == CacheRefresh::per_step)) {
                const auto positions = live_positions(state, plan_ptr, false);
                std::vector<TokenId> tokens;
                tokens.reserve(positions.size());
                for (Position p : positions) {
                    tokens.push_back(state.tokens[static_cast<std::size_t>(p)]);
                }
                const ForwardOutput full = model.forward(tokens, positions, nullptr, {.capture_states = true});
                cache = extract_prefix_kv(full, 0, c);
                refreshed = true;
                ++trace.totals.refresh_passes;
                ++trace.totals.forward_passes;
                trace.totals.refresh_suffix_key_visits += block.kept_suffix;
            }
            StepRecord rec = step_unmask(model, state, policy, plan_ptr, cache.empty() ? nullptr : &cache);
            rec.step_in_block = step_in_block++;
            rec.refreshed = refreshed;
            ++trace.totals.forward_passes;
            ++trace.totals.steps;
            trace.totals.suffix_key_visits += rec.live_suffix_count;
            trace.totals.generated_length += static_cast<std::int64_t>(rec.unmasked_positions.size());
            trace.steps.push_back(std::move(rec));
        }
        block.steps = step_in_block;
        trace.blocks.push_back(block);
        ++trace.totals.blocks_decoded;

        if (policy.early_termination) {
            const auto first = state.tokens.begin() + c;
            const auto last = state.tokens.begin() + s;
            if (std::find(first, last, policy.eos_id) != last) {
                if (s < state.size()) {
                    std::fill(state.tokens.begin() + s, state.tokens.end(), policy.eos_id);
                    std::fill(state.masked.begin() + s, state.masked.end(), 0);
                    trace.totals.terminated_early = true;
                    trace.totals.eos_fill_start = s;
                }
                break;
            }
        }
    }
    if (options.stop_before_block) {
        state.current_block = std::min(*options.stop_before_block, n_blocks);
    }
    return run;
}

} // namespace

DecodeResult decode(const Denoiser & model, std::span<const TokenId> prompt, std::int64_t gen_len,
                    const DecodePolicy & policy, const std::optional<DropoutConfig> & dropout,
                    const DecodeOptions & options) {
    DecodeRun run = run_decode(model, prompt, gen_len, policy, dropout, options);
    return {std::move(run.state.tokens), std::move(run.trace)};
}

SequenceState state_before_block(const Denoiser & model, std::span<const TokenId> prompt, std::int64_t gen_len,
                                 const DecodePolicy & policy, const std::optional<DropoutConfig> & dropout,
                                 std::int64_t block) {
    DecodeOptions options;
    options.stop_before_block = block;
    return run_decode(model, prompt, gen_len, policy, dropout, options).state;
}

} // namespace dpad
