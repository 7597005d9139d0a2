#pragma once

#include "dpad/model.hpp"
#include "dpad/suffix_plan.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace dpad {

enum class UnmaskMode {
    topk,                // k_s highest-confidence positions per step
    threshold_parallel,  // every position with confidence >= threshold
};

enum class CacheRefresh {
    per_block,  // recompute prefix K/V once at each block boundary
    per_step,   // recompute before every step; exact, used as an oracle
};

std::string_view to_string(UnmaskMode mode);
UnmaskMode unmask_mode_from_string(std::string_view name);
std::string_view to_string(CacheRefresh refresh);
CacheRefresh cache_refresh_from_string(std::string_view name);

struct DecodePolicy {
    UnmaskMode mode = UnmaskMode::topk;
    std::int64_t block_size = 32;
    // Steps per block in topk mode; the block's B tokens are spread over
    // them as evenly as possible, earlier steps taking the remainder.
    std::int64_t steps_per_block = 32;
    double confidence_threshold = 0.9;
    bool use_prefix_cache = false;
    CacheRefresh cache_refresh = CacheRefresh::per_block;
    bool use_suffix_dropout = false;
    bool early_termination = false;
    TokenId eos_id = 1;
    TokenId mask_id = 0;

    void validate(int vocab_size) const;
    // k_s for each step of a block (topk mode).
    std::vector<std::int64_t> unmask_schedule() const;

    friend bool operator==(const DecodePolicy &, const DecodePolicy &) = default;
};

struct SequenceState {
    std::vector<TokenId> tokens;
    std::vector<std::uint8_t> masked;  // one flag per position
    std::int64_t prompt_len = 0;
    std::int64_t gen_len = 0;
    std::int64_t block_size = 1;
    std::int64_t current_block = 0;
    std::int64_t step = 0;

    std::int64_t size() const { return prompt_len + gen_len; }
    std::int64_t block_count() const { return block_size > 0 ? gen_len / block_size : 0; }
    Position block_begin(std::int64_t block) const { return prompt_len + block * block_size; }
    Position block_end(std::int64_t block) const { return block_begin(block) + block_size; }
    std::int64_t masked_in(Position begin, Position end) const;
    std::int64_t masked_count() const { return masked_in(0, size()); }
};

SequenceState initial_state(std::span<const TokenId> prompt, std::int64_t gen_len, const DecodePolicy & policy);

struct StepRecord {
    std::int64_t step = 0;
    std::int64_t block = 0;
    std::int64_t step_in_block = 0;
    std::vector<Position> unmasked_positions;
    std::vector<TokenId> unmasked_tokens;
    std::vector<double> confidences;  // aligned with unmasked_positions
    bool fallback = false;            // threshold mode: nothing qualified, argmax taken
    bool refreshed = false;           // prefix cache recomputed before this step
    std::int64_t live_suffix_count = 0;
    std::vector<Position> cache_hit_positions;
    std::int64_t forward_token_count = 0;
};

struct BlockRecord {
    std::int64_t block = 0;
    std::int64_t steps = 0;
    std::int64_t suffix_length = 0;  // positions after the block in the sequence
    std::int64_t kept_suffix = 0;    // live suffix tokens per step of this block
    Position window_start = 0;
    Position window_end = 0;
};

struct TraceTotals {
    std::int64_t steps = 0;
    std::int64_t forward_passes = 0;   // including cache refresh passes
    std::int64_t refresh_passes = 0;
    std::int64_t suffix_key_visits = 0;          // sum of live_suffix_count over steps
    std::int64_t refresh_suffix_key_visits = 0;  // suffix keys touched by refresh passes
    std::int64_t generated_length = 0;           // positions unmasked by the model
    std::int64_t blocks_decoded = 0;
    bool terminated_early = false;
    std::int64_t eos_fill_start = -1;  // first eos-filled position when terminated early
};

struct DecodeTrace {
    std::int64_t prompt_len = 0;
    std::int64_t gen_len = 0;
    DecodePolicy policy;
    std::optional<DropoutConfig> dropout;
    std::vector<StepRecord> steps;
    std::vector<BlockRecord> blocks;
    TraceTotals totals;
};

struct DecodeResult {
    std::vector<TokenId> tokens;  // prompt followed by the generation region
    DecodeTrace trace;
};

struct DecodeOptions {
    // Stop before decoding this block (used to reach a mid-generation state).
    std::optional<std::int64_t> stop_before_block;
};

// Each generation position independently replaced by mask_id with
// probability t. The resulting state is a single block covering the
// generation region.
SequenceState forward_mask(std::span<const TokenId> clean, std::int64_t prompt_len, double t, std::uint64_t seed,
                           TokenId mask_id);

// Negative log-likelihood of the clean tokens at masked positions.
double diagnostic_loss(const Denoiser & model, const SequenceState & state, std::span<const TokenId> clean);

// Positions fed to the model for one step of the current block, ascending.
// With a cache the prefix [0, c) is left out; with a plan only kept suffix
// positions are included.
std::vector<Position> live_positions(const SequenceState & state, const SuffixPlan * plan, bool prefix_cached);

// One denoising step on the current block. Updates state in place.
StepRecord step_unmask(const Denoiser & model, SequenceState & state, const DecodePolicy & policy,
                       const SuffixPlan * plan, const PrefixCache * cache);

DecodeResult decode(const Denoiser & model, std::span<const TokenId> prompt, std::int64_t gen_len,
                    const DecodePolicy & policy, const std::optional<DropoutConfig> & dropout,
                    const DecodeOptions & options = {});

// Decodes blocks [0, block) and returns the state at the start of `block`.
SequenceState state_before_block(const Denoiser & model, std::span<const TokenId> prompt, std::int64_t gen_len,
                                 const DecodePolicy & policy, const std::optional<DropoutConfig> & dropout,
                                 std::int64_t block);

} // namespace dpad
