#pragma once

#include "dpad/decoder.hpp"
#include "dpad/model.hpp"
#include "dpad/tensor.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace dpad {

enum class Region { prefix = 0, current = 1, suffix = 2 };

// 3x3 split of one head's attention over prefix [0,c), current [c,s_b)
// and suffix [s_b,L).
struct AttentionPartition {
    std::size_t current_start = 0;
    std::size_t suffix_start = 0;
    std::size_t total = 0;
    std::size_t layer = 0;
    std::size_t head = 0;
    std::array<std::array<Matrix, 3>, 3> blocks;  // [query region][key region]

    const Matrix & block(Region queries, Region keys) const {
        return blocks[static_cast<std::size_t>(queries)][static_cast<std::size_t>(keys)];
    }
    Matrix reassemble() const;
};

AttentionPartition partition(const Matrix & attention, std::size_t current_start, std::size_t suffix_start);

// H_S = A_SP V_P + A_SC V_C + A_SS V_S.
Matrix scratchpad_output(const AttentionPartition & part, const Matrix & v_prefix, const Matrix & v_current,
                         const Matrix & v_suffix);

// One captured attention map (possibly several heads) with the absolute
// positions of its rows and columns and the block boundaries.
struct AttentionSample {
    std::vector<Matrix> heads;
    std::vector<Position> query_positions;
    std::vector<Position> key_positions;
    Position current_start = 0;
    Position suffix_start = 0;
};

// Builds a sample from one layer of a forward run; all heads unless `head`.
AttentionSample sample_from_forward(const ForwardOutput & out, std::size_t layer, std::optional<std::size_t> head,
                                    Position current_start, Position suffix_start);

struct ProfileRow {
    std::int64_t distance = 0;  // key position - suffix_start + 1; suffix keys are >= 1
    double mean = 0.0;
    double min = 0.0;
    double max = 0.0;
    std::int64_t n = 0;

    friend bool operator==(const ProfileRow &, const ProfileRow &) = default;
};

struct DistanceProfile {
    std::vector<ProfileRow> rows;  // ascending distance; only distances with observations
    std::int64_t sample_count = 0;
    std::int64_t skipped = 0;  // samples with fewer than `alignment` prefix tokens

    friend bool operator==(const DistanceProfile &, const DistanceProfile &) = default;
};

// Current-block queries against keys from `alignment` tokens before the
// current block onwards. One observation per (sample, key) is the
// attention that key receives averaged over heads and current-block queries.
// Result does not depend on sample order.
DistanceProfile distance_profile(std::span<const AttentionSample> samples, std::int64_t alignment);

std::string profile_csv(const DistanceProfile & profile);
nlohmann::ordered_json profile_json(const DistanceProfile & profile);

struct SpikePruneOptions {
    std::size_t top_n = 10;
    std::int64_t exclusion_prefix = 128;  // only suffix keys with distance > this are eligible
    std::optional<std::size_t> layer;     // default: last layer
    std::optional<std::size_t> head;      // default: all heads pooled
    std::int64_t alignment = 0;
};

struct SpikePruneResult {
    DistanceProfile before;
    DistanceProfile after;
    std::vector<Position> pruned_positions;  // ascending
    std::int64_t eligible = 0;
    std::vector<Position> after_key_positions;
    double max_row_sum_error = 0.0;  // over every captured map of the rerun
};

// One forward over the whole state, prune the top-n spike suffix keys by
// current-to-suffix attention, rerun without them.
SpikePruneResult spike_prune_experiment(const Denoiser & model, const SequenceState & state,
                                        const SpikePruneOptions & options);

nlohmann::ordered_json spike_prune_json(const SpikePruneResult & result, const SpikePruneOptions & options);

} // namespace dpad
