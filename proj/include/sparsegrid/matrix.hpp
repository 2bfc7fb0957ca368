// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sparsegrid/errors.hpp"
#include "sparsegrid/parallel.hpp"
#include "sparsegrid/rng.hpp"

namespace sparsegrid {

// Dense row-major float32 matrix; the one tensor type all kernels share.
struct Matrix {
    int64_t rows = 0;
    int64_t cols = 0;
    std::vector<float> data;

    Matrix() = default;
    Matrix(int64_t r, int64_t c)
        : rows(r), cols(c), data(static_cast<size_t>(r) * static_cast<size_t>(c), 0.0f) {}

    float* row(int64_t i) { return data.data() + i * cols; }
    const float* row(int64_t i) const { return data.data() + i * cols; }
    float& at(int64_t i, int64_t j) { return data[static_cast<size_t>(i * cols + j)]; }
    float at(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * cols + j)]; }
};

inline bool all_finite(const Matrix& m) {
    for (float v : m.data)
        if (!std::isfinite(v)) return false;
    return true;
}

inline void require_shape(const Matrix& m, int64_t rows, int64_t cols, const std::string& what) {
    if (m.rows != rows || m.cols != cols)
        throw ShapeError(what + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) +
                         ", got " + std::to_string(m.rows) + "x" + std::to_string(m.cols));
}

// C = A * B. Each output element accumulates over the inner index in
// ascending order, so results do not depend on the parallelism degree.
inline Matrix matmul(const Matrix& a, const Matrix& b, int threads = 1) {
    if (a.cols != b.rows)
        throw ShapeError("matmul: inner dimensions differ (" + std::to_string(a.cols) + " vs " +
                         std::to_string(b.rows) + ")");
    Matrix c(a.rows, b.cols);
    const int64_t inner = a.cols, n = b.cols;
    parallel_for(a.rows, threads, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) {
            float* out = c.row(i);
            const float* arow = a.row(i);
            for (int64_t k = 0; k < inner; ++k) {
                const float av = arow[k];
                const float* brow = b.row(k);
                for (int64_t j = 0; j < n; ++j) out[j] += av * brow[j];
            }
        }
    });
    return c;
}

inline void add_inplace(Matrix& a, const Matrix& b) {
    require_shape(b, a.rows, a.cols, "add_inplace");
    for (size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

inline Matrix random_matrix(uint64_t seed, int64_t rows, int64_t cols, double scale) {
    Matrix m(rows, cols);
    SplitMix64 g(seed);
    for (auto& v : m.data) v = static_cast<float>(g.next_gaussian() * scale);
    return m;
}

} // namespace sparsegrid
