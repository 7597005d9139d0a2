#include "dpad/tensor.hpp"

#include "dpad/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace dpad {

namespace {

std::string shape_str(const Matrix & m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

} // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, float fill) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw ShapeError("matrix data length " + std::to_string(data_.size()) + " does not match " +
                         std::to_string(rows) + "x" + std::to_string(cols));
    }
}

Matrix Matrix::from_rows(const std::vector<std::vector<float>> & rows) {
    if (rows.empty()) {
        return {};
    }
    const std::size_t cols = rows.front().size();
    std::vector<float> data;
    data.reserve(rows.size() * cols);
    for (const auto & r : rows) {
        if (r.size() != cols) {
            throw ShapeError("ragged rows in matrix literal");
        }
        data.insert(data.end(), r.begin(), r.end());
    }
    return Matrix(rows.size(), cols, std::move(data));
}

Matrix Matrix::slice(std::size_t row_begin, std::size_t row_end, std::size_t col_begin, std::size_t col_end) const {
    if (row_begin > row_end || row_end > rows_ || col_begin > col_end || col_end > cols_) {
        throw ShapeError("slice out of bounds for " + shape_str(*this));
    }
    Matrix out(row_end - row_begin, col_end - col_begin);
    for (std::size_t r = row_begin; r < row_end; ++r) {
        std::copy(data_.begin() + static_cast<std::ptrdiff_t>(r * cols_ + col_begin),
                  data_.begin() + static_cast<std::ptrdiff_t>(r * cols_ + col_end), out.row(r - row_begin).begin());
    }
    return out;
}

Matrix Matrix::select_rows(std::span<const std::size_t> indices) const {
    Matrix out(indices.size(), cols_);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= rows_) {
            throw ShapeError("row index " + std::to_string(indices[i]) + " out of bounds for " + shape_str(*this));
        }
        auto src = row(indices[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

Matrix Matrix::transpose() const {
    Matrix out(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r) {
        for (std::size_t c = 0; c < cols_; ++c) {
            out(c, r) = (*this)(r, c);
        }
    }
    return out;
}

bool Matrix::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

Matrix matmul(const Matrix & a, const Matrix & b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul shape mismatch: " + shape_str(a) + " x " + shape_str(b));
    }
    const std::size_t n = a.rows();
    const std::size_t m = b.cols();
    const std::size_t inner = a.cols();
    Matrix out(n, m);
    std::vector<double> acc(m);
    for (std::size_t i = 0; i < n; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        auto arow = a.row(i);
        // i-k-j order keeps b row-contiguous; each acc[j] still sums over k in
        // increasing order, which is the fixed accumulation order.
        for (std::size_t k = 0; k < inner; ++k) {
            const double av = arow[k];
            auto brow = b.row(k);
            for (std::size_t j = 0; j < m; ++j) {
                acc[j] += av * static_cast<double>(brow[j]);
            }
        }
        auto orow = out.row(i);
        for (std::size_t j = 0; j < m; ++j) {
            orow[j] = static_cast<float>(acc[j]);
        }
    }
    return out;
}

Matrix add(const Matrix & a, const Matrix & b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError("add shape mismatch: " + shape_str(a) + " + " + shape_str(b));
    }
    Matrix out = a;
    auto od = out.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < od.size(); ++i) {
        od[i] += bd[i];
    }
    return out;
}

Matrix softmax_rows(const Matrix & m) {
    Matrix out(m.rows(), m.cols());
    std::vector<double> e(m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto in = m.row(r);
        if (in.empty()) {
            continue;
        }
        const double mx = *std::max_element(in.begin(), in.end());
        double sum = 0.0;
        for (std::size_t c = 0; c < in.size(); ++c) {
            e[c] = std::exp(static_cast<double>(in[c]) - mx);
            sum += e[c];
        }
        auto o = out.row(r);
        for (std::size_t c = 0; c < in.size(); ++c) {
            o[c] = static_cast<float>(e[c] / sum);
        }
    }
    return out;
}

Matrix rms_norm(const Matrix & x, std::span<const float> gain, double eps) {
    if (gain.size() != x.cols()) {
        throw ShapeError("rms_norm gain length " + std::to_string(gain.size()) + " != " + std::to_string(x.cols()));
    }
    Matrix out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto in = x.row(r);
        double ss = 0.0;
        for (float v : in) {
            ss += static_cast<double>(v) * v;
        }
        const double inv = 1.0 / std::sqrt(ss / static_cast<double>(in.size()) + eps);
        auto o = out.row(r);
        for (std::size_t c = 0; c < in.size(); ++c) {
            o[c] = static_cast<float>(in[c] * inv * gain[c]);
        }
    }
    return out;
}

double max_abs_diff(const Matrix & a, const Matrix & b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        return std::numeric_limits<double>::infinity();
    }
    double worst = 0.0;
    auto ad = a.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < ad.size(); ++i) {
        worst = std::max(worst, std::abs(static_cast<double>(ad[i]) - bd[i]));
    }
    return worst;
}

RotaryTable::RotaryTable(std::size_t head_dim, double base) : head_dim_(head_dim), base_(base) {
    if (head_dim == 0 || head_dim % 2 != 0) {
        throw ShapeError("rotary head_dim must be even and positive, got " + std::to_string(head_dim));
    }
    if (!(base > 1.0)) {
        throw ShapeError("rotary base must exceed 1");
    }
    const std::size_t half = head_dim / 2;
    increments_.resize(half);
    for (std::size_t j = 0; j < half; ++j) {
        increments_[j] = std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(head_dim));
    }
}

void apply_rotary_inplace(std::span<float> vec, std::int64_t position, const RotaryTable & table) {
    if (vec.size() != table.head_dim()) {
        throw ShapeError("rotary vector length " + std::to_string(vec.size()) + " != head_dim " +
                         std::to_string(table.head_dim()));
    }
    const std::size_t half = vec.size() / 2;
    for (std::size_t j = 0; j < half; ++j) {
        const double angle = static_cast<double>(position) * table.increment(j);
        const double c = std::cos(angle);
        const double s = std::sin(angle);
        const double x = vec[j];
        const double y = vec[j + half];
        vec[j] = static_cast<float>(x * c - y * s);
        vec[j + half] = static_cast<float>(x * s + y * c);
    }
}

std::vector<float> apply_rotary(std::span<const float> vec, std::int64_t position, const RotaryTable & table) {
    if (vec.size() % 2 != 0) {
        throw ShapeError("rotary vector length must be even, got " + std::to_string(vec.size()));
    }
    std::vector<float> out(vec.begin(), vec.end());
    apply_rotary_inplace(out, position, table);
    return out;
}

} // namespace dpad
