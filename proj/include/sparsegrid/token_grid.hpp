// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "sparsegrid/errors.hpp"
#include "sparsegrid/matrix.hpp"
#include "sparsegrid/rng.hpp"

namespace sparsegrid {

struct GridDims {
    int64_t t = 0;  // frames
    int64_t h = 0;  // rows
    int64_t w = 0;  // cols
    int64_t d = 0;  // channels per token

    int64_t tokens() const { return t * h * w; }
    int64_t values() const { return tokens() * d; }

    void validate() const {
        if (t < 1 || h < 1 || w < 1 || d < 1)
            throw DimensionError("grid dims must all be >= 1");
        // guard the product against overflow before trusting it
        constexpr int64_t kMax = int64_t{1} << 31;
        if (t > kMax / h || t * h > kMax / w || t * h * w > kMax / d)
            throw DimensionError("grid dims product overflows the supported range");
    }

    bool operator==(const GridDims&) const = default;
};

struct TokenCoord {
    int64_t t = 0, x = 0, y = 0;
    bool operator==(const TokenCoord&) const = default;
};

// Flat token index: i = t*H*W + x*W + y.
inline int64_t flatten_token(const GridDims& g, const TokenCoord& c) {
    return c.t * g.h * g.w + c.x * g.w + c.y;
}

inline TokenCoord unflatten_token(const GridDims& g, int64_t i) {
    const int64_t hw = g.h * g.w;
    return TokenCoord{i / hw, (i % hw) / g.w, i % g.w};
}

// Dense spatio-temporal token tensor, row-major in (t, h, w, d) order.
struct TokenGrid {
    GridDims dims;
    std::vector<float> data;

    TokenGrid() = default;
    explicit TokenGrid(const GridDims& g) : dims(g), data(static_cast<size_t>(g.values()), 0.0f) {}

    float& at(int64_t token, int64_t channel) { return data[static_cast<size_t>(token * dims.d + channel)]; }
    float at(int64_t token, int64_t channel) const { return data[static_cast<size_t>(token * dims.d + channel)]; }

    // N x d view of the same values (copy; grids are small at desk scale).
    Matrix to_matrix() const {
        Matrix m(dims.tokens(), dims.d);
        m.data = data;
        return m;
    }
};

inline TokenGrid grid_from_matrix(const Matrix& m, const GridDims& dims) {
    if (m.rows != dims.tokens() || m.cols != dims.d)
        throw ShapeError("grid_from_matrix: matrix does not match dims");
    TokenGrid g(dims);
    g.data = m.data;
    return g;
}

enum class NoiseDistribution { standard_normal, uniform_unit };
enum class NoiseCorrelation { iid, block_smoothed };

// Deterministic synthetic-noise description. Same spec, same grid, bit for
// bit, on every platform: values come from a single splitmix64 stream filled
// in token-major order (token 0 channel 0, token 0 channel 1, ...).
struct SeededNoiseSpec {
    uint64_t seed = 0;
    NoiseDistribution distribution = NoiseDistribution::standard_normal;
    NoiseCorrelation correlation = NoiseCorrelation::iid;
    // box-filter window per (t, h, w) axis; only used when block_smoothed
    std::array<int64_t, 3> window{1, 1, 1};
};

namespace detail {

// Truncated box filter along one axis of the (T,H,W,d) tensor, boundary
// windows renormalized by their actual width.
inline void box_smooth_axis(std::vector<double>& vals, const GridDims& g, int axis, int64_t window) {
    if (window <= 1) return;
    const int64_t before = (window - 1) / 2;
    const int64_t after = window - 1 - before;
    const int64_t dims[3] = {g.t, g.h, g.w};
    const int64_t n = dims[axis];
    std::vector<double> out(vals.size());
    const int64_t strides[3] = {g.h * g.w * g.d, g.w * g.d, g.d};
    const int64_t stride = strides[axis];
    for (int64_t tok = 0; tok < g.tokens(); ++tok) {
        const TokenCoord c = unflatten_token(g, tok);
        const int64_t pos = axis == 0 ? c.t : (axis == 1 ? c.x : c.y);
        const int64_t lo = std::max<int64_t>(0, pos - before);
        const int64_t hi = std::min<int64_t>(n - 1, pos + after);
        const int64_t base = tok * g.d;
        for (int64_t ch = 0; ch < g.d; ++ch) {
            double acc = 0.0;
            for (int64_t p = lo; p <= hi; ++p)
                acc += vals[static_cast<size_t>(base + (p - pos) * stride + ch)];
            out[static_cast<size_t>(base + ch)] = acc / static_cast<double>(hi - lo + 1);
        }
    }
    vals = std::move(out);
}

} // namespace detail

inline TokenGrid generate_grid(const SeededNoiseSpec& spec, const GridDims& dims) {
    dims.validate();
    if (spec.correlation == NoiseCorrelation::block_smoothed)
        for (int64_t w : spec.window)
            if (w < 1) throw ParamError("smoothing window sizes must be >= 1");

    std::vector<double> vals(static_cast<size_t>(dims.values()));
    SplitMix64 g(spec.seed);
    if (spec.distribution == NoiseDistribution::standard_normal) {
        for (auto& v : vals) v = g.next_gaussian();
    } else {
        for (auto& v : vals) v = g.next_unit();
    }
    if (spec.correlation == NoiseCorrelation::block_smoothed) {
        detail::box_smooth_axis(vals, dims, 0, spec.window[0]);
        detail::box_smooth_axis(vals, dims, 1, spec.window[1]);
        detail::box_smooth_axis(vals, dims, 2, spec.window[2]);
    }

    TokenGrid out(dims);
    for (size_t i = 0; i < vals.size(); ++i) out.data[i] = static_cast<float>(vals[i]);
    return out;
}

} // namespace sparsegrid
