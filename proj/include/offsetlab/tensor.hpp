#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "offsetlab/error.hpp"

namespace offsetlab {

// Dense row-major [batch][patch][channel] array of doubles. All activation
// math in this project runs in 64-bit floats so blend identities can be
// checked to tight tolerance.
struct Tensor3 {
    int batch = 0;
    int patches = 0;
    int channels = 0;
    std::vector<double> data;

    Tensor3() = default;
    Tensor3(int b, int p, int d)
        : batch(b), patches(p), channels(d),
          data(static_cast<size_t>(b) * static_cast<size_t>(p) * static_cast<size_t>(d), 0.0) {}

    size_t size() const noexcept { return data.size(); }

    double& at(int b, int p, int d) {
        return data[(static_cast<size_t>(b) * patches + p) * channels + d];
    }
    double at(int b, int p, int d) const {
        return data[(static_cast<size_t>(b) * patches + p) * channels + d];
    }

    std::span<double> token(int b, int p) {
        return {data.data() + (static_cast<size_t>(b) * patches + p) * channels,
                static_cast<size_t>(channels)};
    }
    std::span<const double> token(int b, int p) const {
        return {data.data() + (static_cast<size_t>(b) * patches + p) * channels,
                static_cast<size_t>(channels)};
    }

    bool same_shape(const Tensor3& o) const noexcept {
        return batch == o.batch && patches == o.patches && channels == o.channels;
    }
};

struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c)
        : rows(r), cols(c), data(static_cast<size_t>(r) * static_cast<size_t>(c), 0.0) {}

    double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

    std::span<double> row(int r) {
        return {data.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)};
    }
    std::span<const double> row(int r) const {
        return {data.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)};
    }

    static Matrix identity(int n) {
        Matrix m(n, n);
        for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
        return m;
    }
};

// Euclidean norm; empty input is the zero vector.
inline double l2_norm(std::span<const double> v) noexcept {
    double acc = 0.0;
    for (double x : v) acc += x * x;
    return std::sqrt(acc);
}

// Variance with divisor = length (population convention), so a single
// element has variance 0.
inline double population_variance(std::span<const double> v) {
    if (v.empty()) throw Error("EmptyVector", "population_variance of empty vector");
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double acc = 0.0;
    for (double x : v) acc += (x - mean) * (x - mean);
    return acc / static_cast<double>(v.size());
}

inline double clip_unit(double x) noexcept {
    return std::min(std::max(x, 0.0), 1.0);
}

// Row-max subtraction keeps exp() in range for large logits.
inline Matrix softmax_rows(const Matrix& m) {
    Matrix out(m.rows, m.cols);
    for (int r = 0; r < m.rows; ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < m.cols; ++c) mx = std::max(mx, m.at(r, c));
        double sum = 0.0;
        for (int c = 0; c < m.cols; ++c) {
            double e = std::exp(m.at(r, c) - mx);
            out.at(r, c) = e;
            sum += e;
        }
        for (int c = 0; c < m.cols; ++c) out.at(r, c) /= sum;
    }
    return out;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) {
        throw Error("ShapeMismatch", "matmul " + std::to_string(a.rows) + "x" +
                                         std::to_string(a.cols) + " * " + std::to_string(b.rows) +
                                         "x" + std::to_string(b.cols));
    }
    Matrix out(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        for (int k = 0; k < a.cols; ++k) {
            double aik = a.at(i, k);
            if (aik == 0.0) continue;
            for (int j = 0; j < b.cols; ++j) out.at(i, j) += aik * b.at(k, j);
        }
    }
    return out;
}

inline double frobenius_norm(const Tensor3& t) noexcept {
    return l2_norm(std::span<const double>(t.data));
}

inline Tensor3 subtract(const Tensor3& a, const Tensor3& b) {
    if (!a.same_shape(b)) throw Error("ShapeMismatch", "subtract on mismatched tensors");
    Tensor3 out = a;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.data[i];
    return out;
}

}  // namespace offsetlab
