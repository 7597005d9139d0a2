#include "dpad/analysis.hpp"

#include "dpad/error.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

namespace dpad {

AttentionPartition partition(const Matrix & attention, std::size_t current_start, std::size_t suffix_start) {
    const std::size_t total = attention.rows();
    if (attention.cols() != total) {
        throw ShapeError("partition: attention map must be square");
    }
    if (!(current_start < suffix_start && suffix_start <= total)) {
        throw RangeError("partition: need 0 <= c < s_b <= L, got c=" + std::to_string(current_start) +
                         " s_b=" + std::to_string(suffix_start) + " L=" + std::to_string(total));
    }
    const std::array<std::size_t, 4> cuts = {0, current_start, suffix_start, total};
    AttentionPartition part;
    part.current_start = current_start;
    part.suffix_start = suffix_start;
    part.total = total;
    for (std::size_t r = 0; r < 3; ++r) {
        for (std::size_t c = 0; c < 3; ++c) {
            part.blocks[r][c] = attention.slice(cuts[r], cuts[r + 1], cuts[c], cuts[c + 1]);
        }
    }
    return part;
}

Matrix AttentionPartition::reassemble() const {
    const std::array<std::size_t, 4> cuts = {0, current_start, suffix_start, total};
    Matrix out(total, total);
    for (std::size_t r = 0; r < 3; ++r) {
        for (std::size_t c = 0; c < 3; ++c) {
            const Matrix & b = blocks[r][c];
            for (std::size_t i = 0; i < b.rows(); ++i) {
                auto src = b.row(i);
                std::copy(src.begin(), src.end(),
                          out.row(cuts[r] + i).begin() + static_cast<std::ptrdiff_t>(cuts[c]));
            }
        }
    }
    return out;
}

Matrix scratchpad_output(const AttentionPartition & part, const Matrix & v_prefix, const Matrix & v_current,
                         const Matrix & v_suffix) {
    const Matrix & sp = part.block(Region::suffix, Region::prefix);
    const Matrix & sc = part.block(Region::suffix, Region::current);
    const Matrix & ss = part.block(Region::suffix, Region::suffix);
    if (v_prefix.rows() != sp.cols() || v_current.rows() != sc.cols() || v_suffix.rows() != ss.cols()) {
        throw ShapeError("scratchpad_output: value rows do not match partition widths");
    }
    if (v_prefix.cols() != v_current.cols() || v_current.cols() != v_suffix.cols()) {
        throw ShapeError("scratchpad_output: value widths differ");
    }
    const std::size_t rows = ss.rows();
    const std::size_t width = v_suffix.cols();
    // Single accumulator per output element, summed over key columns in
    // prefix, current, suffix order.
    Matrix out(rows, width);
    std::vector<double> acc(width);
    for (std::size_t i = 0; i < rows; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (const auto & [a, v] : {std::pair<const Matrix &, const Matrix &>{sp, v_prefix}, {sc, v_current}, {ss, v_suffix}}) {
            for (std::size_t k = 0; k < a.cols(); ++k) {
                const double w = a(i, k);
                auto vr = v.row(k);
                for (std::size_t j = 0; j < width; ++j) {
                    acc[j] += w * vr[j];
                }
            }
        }
        for (std::size_t j = 0; j < width; ++j) {
            out(i, j) = static_cast<float>(acc[j]);
        }
    }
    return out;
}

AttentionSample sample_from_forward(const ForwardOutput & out, std::size_t layer, std::optional<std::size_t> head,
                                    Position current_start, Position suffix_start) {
    if (layer >= out.attention.size()) {
        throw RangeError("layer " + std::to_string(layer) + " was not captured");
    }
    AttentionSample s;
    const auto & maps = out.attention[layer];
    if (head) {
        if (*head >= maps.size()) {
            throw RangeError("head " + std::to_string(*head) + " out of range");
        }
        s.heads.push_back(maps[*head]);
    } else {
        s.heads = maps;
    }
    s.query_positions = out.positions;
    s.key_positions = out.key_positions;
    s.current_start = current_start;
    s.suffix_start = suffix_start;
    return s;
}

DistanceProfile distance_profile(std::span<const AttentionSample> samples, std::int64_t alignment) {
    std::map<std::int64_t, std::vector<double>> observations;
    DistanceProfile profile;
    for (const auto & s : samples) {
        if (s.current_start < alignment) {
            ++profile.skipped;
            continue;
        }
        ++profile.sample_count;
        std::vector<std::size_t> query_rows;
        for (std::size_t i = 0; i < s.query_positions.size(); ++i) {
            if (s.query_positions[i] >= s.current_start && s.query_positions[i] < s.suffix_start) {
                query_rows.push_back(i);
            }
        }
        if (query_rows.empty()) {
            continue;
        }
        for (const Matrix & map : s.heads) {
            if (map.rows() != s.query_positions.size() || map.cols() != s.key_positions.size()) {
                throw ShapeError("distance_profile: map shape does not match its position lists");
            }
        }
        // One observation per sample and key: flat mean over heads and current queries.
        const Position first_key = s.current_start - alignment;
        const double count = static_cast<double>(query_rows.size() * s.heads.size());
        for (std::size_t k = 0; k < s.key_positions.size(); ++k) {
            if (s.key_positions[k] < first_key || s.heads.empty()) {
                continue;
            }
            double sum = 0.0;
            for (const Matrix & map : s.heads) {
                for (std::size_t r : query_rows) {
                    sum += map(r, k);
                }
            }
            observations[s.key_positions[k] - s.suffix_start + 1].push_back(sum / count);
        }
    }
    for (auto & [distance, values] : observations) {
        std::sort(values.begin(), values.end());
        ProfileRow row;
        row.distance = distance;
        row.n = static_cast<std::int64_t>(values.size());
        row.min = values.front();
        row.max = values.back();
        const double sum = std::accumulate(values.begin(), values.end(), 0.0);
        row.mean = std::clamp(sum / static_cast<double>(values.size()), row.min, row.max);
        profile.rows.push_back(row);
    }
    return profile;
}

std::string profile_csv(const DistanceProfile & profile) {
    std::ostringstream out;
    out.precision(17);
    out << "distance,mean,min,max,n\n";
    for (const auto & r : profile.rows) {
        out << r.distance << ',' << r.mean << ',' << r.min << ',' << r.max << ',' << r.n << '\n';
    }
    return out.str();
}

nlohmann::ordered_json profile_json(const DistanceProfile & profile) {
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto & r : profile.rows) {
        rows.push_back({{"distance", r.distance}, {"mean", r.mean}, {"min", r.min}, {"max", r.max}, {"n", r.n}});
    }
    return {{"sample_count", profile.sample_count}, {"skipped", profile.skipped}, {"rows", rows}};
}

namespace {

ForwardOutput run_full(const Denoiser & model, std::span<const TokenId> tokens, std::span<const Position> positions) {
    return model.forward(tokens, positions, nullptr, {.capture_attention = true});
}

double row_sum_error(const ForwardOutput & out) {
    double worst = 0.0;
    for (const auto & layer : out.attention) {
        for (const Matrix & m : layer) {
            for (std::size_t r = 0; r < m.rows(); ++r) {
                double sum = 0.0;
                for (float v : m.row(r)) {
                    sum += v;
                }
                worst = std::max(worst, std::abs(sum - 1.0));
            }
        }
    }
    return worst;
}

} // namespace

SpikePruneResult spike_prune_experiment(const Denoiser & model, const SequenceState & state,
                                        const SpikePruneOptions & options) {
    const Position c = state.block_begin(state.current_block);
    const Position s = state.block_end(state.current_block);
    if (s > state.size()) {
        throw RangeError("spike_prune_experiment: current block extends past the sequence");
    }
    const std::size_t layer =
        options.layer.value_or(static_cast<std::size_t>(model.config().n_layers) - 1);
    if (layer >= static_cast<std::size_t>(model.config().n_layers)) {
        throw RangeError("spike_prune_experiment: layer " + std::to_string(layer) + " out of range");
    }

    std::vector<Position> positions(static_cast<std::size_t>(state.size()));
    std::iota(positions.begin(), positions.end(), Position{0});
    const ForwardOutput before = run_full(model, state.tokens, positions);
    const AttentionSample sample_before = sample_from_forward(before, layer, options.head, c, s);

    // Per-key current-to-suffix attention pooled over heads and queries.
    struct Candidate {
        Position position;
        double score;
    };
    std::vector<Candidate> eligible;
    for (std::size_t k = 0; k < before.key_positions.size(); ++k) {
        const Position p = before.key_positions[k];
        if (p - s + 1 <= options.exclusion_prefix) {
            continue;
        }
        double score = 0.0;
        for (const Matrix & m : sample_before.heads) {
            for (std::size_t r = 0; r < before.positions.size(); ++r) {
                if (before.positions[r] >= c && before.positions[r] < s) {
                    score += m(r, k);
                }
            }
        }
        eligible.push_back({p, score});
    }
    std::sort(eligible.begin(), eligible.end(), [](const Candidate & a, const Candidate & b) {
        return a.score != b.score ? a.score > b.score : a.position < b.position;
    });

    SpikePruneResult result;
    result.eligible = static_cast<std::int64_t>(eligible.size());
    const std::size_t take = std::min(options.top_n, eligible.size());
    for (std::size_t i = 0; i < take; ++i) {
        result.pruned_positions.push_back(eligible[i].position);
    }
    std::sort(result.pruned_positions.begin(), result.pruned_positions.end());

    std::vector<Position> kept_positions;
    std::vector<TokenId> kept_tokens;
    for (Position p : positions) {
        if (!std::binary_search(result.pruned_positions.begin(), result.pruned_positions.end(), p)) {
            kept_positions.push_back(p);
            kept_tokens.push_back(state.tokens[static_cast<std::size_t>(p)]);
        }
    }
    const ForwardOutput after = run_full(model, kept_tokens, kept_positions);
    const AttentionSample sample_after = sample_from_forward(after, layer, options.head, c, s);

    result.before = distance_profile(std::span(&sample_before, 1), options.alignment);
    result.after = distance_profile(std::span(&sample_after, 1), options.alignment);
    result.after_key_positions = after.key_positions;
    result.max_row_sum_error = row_sum_error(after);
    return result;
}

nlohmann::ordered_json spike_prune_json(const SpikePruneResult & result, const SpikePruneOptions & options) {
    nlohmann::ordered_json j;
    j["top_n"] = options.top_n;
    j["exclusion_prefix"] = options.exclusion_prefix;
    j["eligible"] = result.eligible;
    j["pruned_positions"] = result.pruned_positions;
    j["max_row_sum_error"] = result.max_row_sum_error;
    j["before"] = profile_json(result.before);
    j["after"] = profile_json(result.after);
    return j;
}

} // namespace dpad
