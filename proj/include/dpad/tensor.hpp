#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace dpad {

// Dense row-major matrix with 32-bit storage. Reductions accumulate in
// double, always in the same order, so every result is bit reproducible.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, float fill = 0.0f);
    Matrix(std::size_t rows, std::size_t cols, std::vector<float> data);

    static Matrix from_rows(const std::vector<std::vector<float>> & rows);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return data_.empty(); }

    float & operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<const float> data() const { return data_; }
    std::span<float> data() { return data_; }

    // Rows [begin, end) and columns [col_begin, col_end) as a new matrix.
    Matrix slice(std::size_t row_begin, std::size_t row_end, std::size_t col_begin, std::size_t col_end) const;
    Matrix select_rows(std::span<const std::size_t> indices) const;
    Matrix transpose() const;

    bool all_finite() const;

    friend bool operator==(const Matrix &, const Matrix &) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<float> data_;
};

Matrix matmul(const Matrix & a, const Matrix & b);
Matrix add(const Matrix & a, const Matrix & b);

// Numerically stable row softmax (max subtraction, double accumulation).
Matrix softmax_rows(const Matrix & m);

// x / rms(x) * gain, row by row.
Matrix rms_norm(const Matrix & x, std::span<const float> gain, double eps = 1e-6);

double max_abs_diff(const Matrix & a, const Matrix & b);

class RotaryTable {
public:
    explicit RotaryTable(std::size_t head_dim, double base = 10000.0);

    std::size_t head_dim() const { return head_dim_; }
    double base() const { return base_; }
    // Angle increment for dimension pair j; strictly decreasing in j.
    double increment(std::size_t pair) const { return increments_[pair]; }
    std::span<const double> increments() const { return increments_; }

private:
    std::size_t head_dim_;
    double base_;
    std::vector<double> increments_;
};

// Rotates dimension pairs (j, j + head_dim/2) by position * increment(j).
// The angle always comes from the absolute position supplied, never from
// where the vector sits in a batch.
std::vector<float> apply_rotary(std::span<const float> vec, std::int64_t position, const RotaryTable & table);
void apply_rotary_inplace(std::span<float> vec, std::int64_t position, const RotaryTable & table);

} // namespace dpad
