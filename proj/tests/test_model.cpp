#include "dpad/error.hpp"
#include "dpad/model.hpp"
#include "fixtures.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <numeric>

using namespace dpad;
using namespace dpad::fixtures;

namespace {

std::vector<Position> iota_positions(std::size_t n, Position start = 0) {
    std::vector<Position> p(n);
    std::iota(p.begin(), p.end(), start);
    return p;
}

// Layer-0 key for one token at one position, recomputed from the weights.
std::vector<float> layer0_key(const Model & m, TokenId token, Position pos) {
    const auto & w = m.weights();
    const Matrix x = w.embedding.slice(static_cast<std::size_t>(token), static_cast<std::size_t>(token) + 1, 0,
                                       w.embedding.cols());
    Matrix k = matmul(rms_norm(x, w.layers[0].attn_norm), w.layers[0].wk);
    const auto hd = static_cast<std::size_t>(m.config().head_dim());
    for (int h = 0; h < m.config().n_heads; ++h) {
        apply_rotary_inplace(k.row(0).subspan(static_cast<std::size_t>(h) * hd, hd), pos, m.rotary());
    }
    return {k.row(0).begin(), k.row(0).end()};
}

double row_diff(std::span<const float> a, std::span<const float> b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        d = std::max(d, std::abs(static_cast<double>(a[i]) - b[i]));
    }
    return d;
}

} // namespace

TEST_CASE("init is deterministic per seed") {
    const Model a = init_model(small_config(1));
    const Model b = init_model(small_config(1));
    const Model c = init_model(small_config(2));
    CHECK(a.layer_checksum(0) == b.layer_checksum(0));
    CHECK(a.layer_checksum(0) != c.layer_checksum(0));
    CHECK(a.layer_checksum(0) != a.layer_checksum(1));
}

TEST_CASE("config validation") {
    ModelConfig c;
    c.dim = 30;
    c.n_heads = 4;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK_THROWS_AS(init_model(c), ConfigError);
    c = ModelConfig{};
    c.dim = 12;
    c.n_heads = 4;  // head_dim 3 is odd
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = ModelConfig{};
    c.vocab_size = 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = ModelConfig{};
    c.n_layers = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("forward produces finite logits and stochastic attention") {
    const Model m = init_model(small_config(5));
    const auto tokens = random_prompt(9, 24, 32);
    const auto pos = iota_positions(tokens.size());
    const ForwardOutput out = m.forward(tokens, pos, nullptr, {.capture_attention = true});
    CHECK(out.logits.rows() == tokens.size());
    CHECK(out.logits.cols() == 32);
    CHECK(out.logits.all_finite());
    REQUIRE(out.attention.size() == 2);
    for (const auto & layer : out.attention) {
        REQUIRE(layer.size() == 2);
        for (const Matrix & a : layer) {
            for (std::size_t r = 0; r < a.rows(); ++r) {
                double s = 0.0;
                for (float v : a.row(r)) {
                    s += v;
                }
                CHECK(std::abs(s - 1.0) < 1e-6);
            }
        }
    }
    CHECK(m.forward(tokens, pos, nullptr, {}).logits == out.logits);
}

TEST_CASE("sparse positions rotate like the dense run") {
    const Model m = init_model(small_config(3));
    const auto dense_tokens = random_prompt(4, 10, 32);
    const ForwardOutput dense =
        m.forward(dense_tokens, iota_positions(10), nullptr, {.capture_states = true});

    const std::vector<Position> sparse_pos = {0, 1, 2, 5, 9};
    std::vector<TokenId> sparse_tokens;
    for (Position p : sparse_pos) {
        sparse_tokens.push_back(dense_tokens[static_cast<std::size_t>(p)]);
    }
    const ForwardOutput sparse = m.forward(sparse_tokens, sparse_pos, nullptr, {.capture_states = true});
    for (std::size_t i = 0; i < sparse_pos.size(); ++i) {
        const auto p = static_cast<std::size_t>(sparse_pos[i]);
        CHECK(row_diff(sparse.states[0].keys.row(i), dense.states[0].keys.row(p)) < 1e-6);
        CHECK(row_diff(sparse.states[0].queries.row(i), dense.states[0].queries.row(p)) < 1e-6);
        CHECK(row_diff(sparse.states[0].keys.row(i), layer0_key(m, dense_tokens[p], sparse_pos[i])) < 1e-6);
    }
    // Position 5 sits at local row 3; a compact 0..4 relabeling would rotate it by 3.
    CHECK(row_diff(sparse.states[0].keys.row(3), layer0_key(m, dense_tokens[5], 3)) > 1e-3);
}

TEST_CASE("logits do not depend on live order") {
    const Model m = init_model(small_config(8));
    Rng rng(21);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t n = 6 + rng.below(20);
        const auto tokens = random_prompt(100 + trial, n, 32);
        std::vector<Position> pos(n);
        Position p = 0;
        for (auto & x : pos) {
            p += 1 + static_cast<Position>(rng.below(4));
            x = p;
        }
        const ForwardOutput base = m.forward(tokens, pos, nullptr, {});

        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        for (std::size_t i = n - 1; i > 0; --i) {
            std::swap(perm[i], perm[rng.below(i + 1)]);
        }
        std::vector<TokenId> t2;
        std::vector<Position> p2;
        for (std::size_t i : perm) {
            t2.push_back(tokens[i]);
            p2.push_back(pos[i]);
        }
        const ForwardOutput shuffled = m.forward(t2, p2, nullptr, {});
        CHECK(shuffled.key_positions == base.key_positions);
        double worst = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            worst = std::max(worst, row_diff(shuffled.logits.row(r), base.logits.row(perm[r])));
        }
        CHECK(worst < 1e-5);
    }
}

TEST_CASE("same-step prefix cache reproduces dense logits") {
    const Model m = init_model(small_config(12));
    for (std::size_t c : {0u, 1u, 8u, 19u}) {
        const auto tokens = random_prompt(50 + c, 28, 32);
        const ForwardOutput dense = m.forward(tokens, iota_positions(28), nullptr, {.capture_states = true});
        const PrefixCache cache = extract_prefix_kv(dense, 0, static_cast<Position>(c));
        if (c == 0) {
            CHECK(cache.empty());
        } else {
            REQUIRE(cache.size() == 2);
            CHECK(cache[0].positions == iota_positions(c));
            CHECK(cache[1].positions == iota_positions(c));
        }
        const std::vector<TokenId> live(tokens.begin() + static_cast<std::ptrdiff_t>(c), tokens.end());
        const ForwardOutput cached = m.forward(live, iota_positions(28 - c, static_cast<Position>(c)), &cache, {});
        CHECK(cached.key_positions == dense.key_positions);
        double worst = 0.0;
        for (std::size_t r = 0; r < live.size(); ++r) {
            worst = std::max(worst, row_diff(cached.logits.row(r), dense.logits.row(r + c)));
        }
        CHECK(worst < 1e-5);
    }
}

TEST_CASE("extract_prefix_kv errors") {
    const Model m = init_model(small_config(1));
    const auto tokens = random_prompt(1, 6, 32);
    const ForwardOutput plain = m.forward(tokens, iota_positions(6), nullptr, {});
    CHECK(extract_prefix_kv(plain, 0, 0).empty());
    CHECK_THROWS_AS(extract_prefix_kv(plain, 0, 3), ContractViolation);
    const ForwardOutput sparse = m.forward(std::vector<TokenId>{2, 3}, std::vector<Position>{0, 4}, nullptr,
                                           {.capture_states = true});
    CHECK_THROWS_AS(extract_prefix_kv(sparse, 0, 2), RangeError);
}

TEST_CASE("forward input validation") {
    const Model m = init_model(small_config(1));
    const std::vector<TokenId> t = {2, 3, 4};
    CHECK_THROWS_AS(m.forward(t, std::vector<Position>{0, 1}, nullptr, {}), ShapeError);
    CHECK_THROWS(m.forward(t, std::vector<Position>{0, 1, 1}, nullptr, {}));
    CHECK_THROWS(m.forward(t, std::vector<Position>{0, -1, 2}, nullptr, {}));
    CHECK_THROWS(m.forward(std::vector<TokenId>{2, 40, 3}, std::vector<Position>{0, 1, 2}, nullptr, {}));

    const ForwardOutput dense = m.forward(t, std::vector<Position>{0, 1, 2}, nullptr, {.capture_states = true});
    const PrefixCache cache = extract_prefix_kv(dense, 0, 2);
    CHECK_THROWS_AS(m.forward(std::vector<TokenId>{5}, std::vector<Position>{1}, &cache, {}), CacheConsistencyError);
    PrefixCache short_cache = cache;
    short_cache.pop_back();
    CHECK_THROWS_AS(m.forward(std::vector<TokenId>{5}, std::vector<Position>{2}, &short_cache, {}),
                    CacheConsistencyError);
}

TEST_CASE("checkpoint round trip") {
    const auto dir = std::filesystem::temp_directory_path() / "dpad_ckpt_test";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    ModelConfig cfg = small_config(77);
    cfg.logit_gain = 3.5;
    const Model m = init_model(cfg);
    save_checkpoint(m, dir / "toy");
    const Model back = load_checkpoint(dir / "toy");
    CHECK(back.config() == m.config());
    for (std::size_t l = 0; l < 2; ++l) {
        CHECK(back.layer_checksum(l) == m.layer_checksum(l));
    }
    const auto tokens = random_prompt(3, 12, 32);
    CHECK(back.forward(tokens, iota_positions(12), nullptr, {}).logits ==
          m.forward(tokens, iota_positions(12), nullptr, {}).logits);

    std::filesystem::resize_file(dir / "toy.bin", 100);
    CHECK_THROWS_AS(load_checkpoint(dir / "toy"), Error);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing"), Error);
    std::filesystem::remove_all(dir);
}
