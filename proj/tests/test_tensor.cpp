#include "dpad/error.hpp"
#include "dpad/tensor.hpp"
#include "fixtures.hpp"

#include <doctest.h>

#include <cmath>

using namespace dpad;
using dpad::fixtures::random_matrix;

namespace {

Matrix triple_loop(const Matrix & a, const Matrix & b) {
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) {
                acc += static_cast<double>(a(i, k)) * static_cast<double>(b(k, j));
            }
            c(i, j) = static_cast<float>(acc);
        }
    }
    return c;
}

double norm(std::span<const float> v) {
    double s = 0.0;
    for (float x : v) {
        s += static_cast<double>(x) * x;
    }
    return std::sqrt(s);
}

} // namespace

TEST_CASE("matmul small cases") {
    const Matrix id = Matrix::from_rows({{1, 0}, {0, 1}});
    const Matrix b = Matrix::from_rows({{3, 4}, {5, 6}});
    CHECK(matmul(id, b) == b);

    const Matrix r = matmul(Matrix::from_rows({{1, 2}}), Matrix::from_rows({{3}, {4}}));
    REQUIRE(r.rows() == 1);
    REQUIRE(r.cols() == 1);
    CHECK(r(0, 0) == 11.0f);

    CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), ShapeError);
}

TEST_CASE("matmul matches triple loop bit for bit") {
    Rng rng(42);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + rng.below(9), k = 1 + rng.below(9), m = 1 + rng.below(9);
        const Matrix a = random_matrix(rng, n, k, 3.0);
        const Matrix b = random_matrix(rng, k, m, 3.0);
        CHECK(matmul(a, b) == triple_loop(a, b));
    }
    const Matrix a = random_matrix(rng, 7, 5);
    const Matrix b = random_matrix(rng, 5, 3);
    CHECK(matmul(a, b) == triple_loop(a, b));
}

TEST_CASE("softmax rows") {
    const Matrix s = softmax_rows(Matrix::from_rows({{0, 0, 0}, {1000, 0, 0}, {1, 2, 3}}));
    for (std::size_t j = 0; j < 3; ++j) {
        CHECK(s(0, j) == doctest::Approx(1.0 / 3.0).epsilon(1e-7));
    }
    CHECK(std::abs(s(1, 0) - 1.0) < 1e-6);
    CHECK(std::abs(s(1, 1)) < 1e-6);

    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    for (std::size_t j = 0; j < 3; ++j) {
        CHECK(std::abs(s(2, j) - std::exp(static_cast<double>(j + 1)) / z) < 1e-7);
    }
    CHECK(std::abs(s(2, 0) - 0.09003) < 1e-5);
    CHECK(std::abs(s(2, 1) - 0.24473) < 1e-5);
    CHECK(std::abs(s(2, 2) - 0.66524) < 1e-5);
}

TEST_CASE("softmax rows sum to one") {
    Rng rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        const double scale = trial % 4 == 0 ? 200.0 : 4.0;
        const Matrix s = softmax_rows(random_matrix(rng, 1 + rng.below(6), 1 + rng.below(40), scale));
        REQUIRE(s.all_finite());
        for (std::size_t r = 0; r < s.rows(); ++r) {
            double sum = 0.0;
            for (float v : s.row(r)) {
                CHECK(v >= 0.0f);
                sum += v;
            }
            CHECK(std::abs(sum - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("rms_norm against direct formula") {
    Rng rng(3);
    const Matrix x = random_matrix(rng, 4, 6);
    std::vector<float> gain(6);
    for (auto & g : gain) {
        g = static_cast<float>(rng.uniform() + 0.5);
    }
    const Matrix y = rms_norm(x, gain);
    for (std::size_t r = 0; r < 4; ++r) {
        double ms = 0.0;
        for (float v : x.row(r)) {
            ms += static_cast<double>(v) * v;
        }
        const double inv = 1.0 / std::sqrt(ms / 6.0 + 1e-6);
        for (std::size_t c = 0; c < 6; ++c) {
            CHECK(std::abs(y(r, c) - x(r, c) * inv * gain[c]) < 1e-6);
        }
    }
    CHECK_THROWS_AS(rms_norm(x, std::vector<float>(5, 1.0f)), ShapeError);
}

TEST_CASE("matrix slicing and transpose") {
    const Matrix m = Matrix::from_rows({{1, 2, 3}, {4, 5, 6}, {7, 8, 9}});
    CHECK(m.slice(1, 3, 0, 2) == Matrix::from_rows({{4, 5}, {7, 8}}));
    CHECK(m.slice(1, 1, 0, 3).rows() == 0);
    const std::size_t idx[] = {2, 0};
    CHECK(m.select_rows(idx) == Matrix::from_rows({{7, 8, 9}, {1, 2, 3}}));
    CHECK(m.transpose() == Matrix::from_rows({{1, 4, 7}, {2, 5, 8}, {3, 6, 9}}));
    CHECK_THROWS_AS(m.slice(0, 4, 0, 1), ShapeError);
    CHECK_THROWS_AS(Matrix::from_rows({{1, 2}, {3}}), ShapeError);
}

TEST_CASE("rotary basics") {
    const RotaryTable table(8);
    CHECK(table.increment(0) == 1.0);
    CHECK(table.increment(1) == doctest::Approx(std::pow(10000.0, -2.0 / 8.0)));
    CHECK_THROWS_AS(RotaryTable(7), ShapeError);

    const std::vector<float> v = {0.5f, -1.0f, 2.0f, 0.25f, 3.0f, 1.0f, -2.0f, 0.75f};
    CHECK(apply_rotary(v, 0, table) == v);

    const RotaryTable t2(2);
    const std::vector<float> e0 = {1.0f, 0.0f};
    for (std::int64_t p : {1, 5, 100}) {
        const auto r = apply_rotary(e0, p, t2);
        CHECK(std::abs(r[0] - std::cos(static_cast<double>(p))) < 1e-6);
        CHECK(std::abs(r[1] - std::sin(static_cast<double>(p))) < 1e-6);
    }
    CHECK_THROWS_AS(apply_rotary(std::vector<float>(7, 1.0f), 3, table), ShapeError);
}

TEST_CASE("rotary is an isometry per pair") {
    const RotaryTable table(16);
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<float> v(16);
        for (auto & x : v) {
            x = static_cast<float>(rng.normal());
        }
        for (std::int64_t p : {1, 17, 255}) {
            const auto r = apply_rotary(v, p, table);
            CHECK(std::abs(norm(r) - norm(v)) < 1e-6);
            for (std::size_t j = 0; j < 8; ++j) {
                const double before = std::hypot(v[j], v[j + 8]);
                const double after = std::hypot(r[j], r[j + 8]);
                CHECK(std::abs(before - after) < 1e-6);
            }
        }
    }
}

TEST_CASE("rotary composes additively") {
    const RotaryTable table(8);
    const std::vector<float> v = {0.3f, -0.7f, 1.1f, 0.2f, -0.4f, 0.9f, 0.05f, -1.3f};
    const auto twice = apply_rotary(apply_rotary(v, 7, table), 5, table);
    const auto once = apply_rotary(v, 12, table);
    for (std::size_t i = 0; i < v.size(); ++i) {
        CHECK(std::abs(twice[i] - once[i]) < 1e-5);
    }
}
