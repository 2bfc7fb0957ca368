// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sparsegrid/errors.hpp"
#include "sparsegrid/matrix.hpp"
#include "sparsegrid/token_grid.hpp"

namespace sparsegrid {

struct CubeDims {
    int64_t t = 1, h = 1, w = 1;
    int64_t volume() const { return t * h * w; }
    bool operator==(const CubeDims&) const = default;
};

// Non-overlapping 3D partition of the (T,H,W) grid. Every token belongs to
// exactly one cube; each cube designates its center token (local offset
// floor(s/2) per axis) as the destination, the rest are sources.
struct CubeLayout {
    CubeDims cube_dims;
    GridDims grid;
    int64_t n_cubes = 0;
    int64_t cube_size = 0;
    std::vector<int32_t> token_to_cube;                // [N]
    std::vector<std::vector<int32_t>> cube_to_tokens;  // raster order within cube
    std::vector<int32_t> destination_of_cube;          // token index per cube

    int64_t n_tokens() const { return grid.tokens(); }
    bool is_destination(int64_t token) const {
        return destination_of_cube[static_cast<size_t>(token_to_cube[static_cast<size_t>(token)])] == token;
    }
};

inline CubeLayout build_layout(const GridDims& grid, const CubeDims& cube) {
    grid.validate();
    if (cube.t < 1 || cube.h < 1 || cube.w < 1) throw ParamError("cube dims must all be >= 1");
    if (grid.t % cube.t != 0 || grid.h % cube.h != 0 || grid.w % cube.w != 0)
        throw LayoutError("grid (" + std::to_string(grid.t) + "," + std::to_string(grid.h) + "," +
                          std::to_string(grid.w) + ") not divisible by cube (" + std::to_string(cube.t) + "," +
                          std::to_string(cube.h) + "," + std::to_string(cube.w) + ")");

    CubeLayout lay;
    lay.cube_dims = cube;
    lay.grid = grid;
    const int64_t ct = grid.t / cube.t, ch = grid.h / cube.h, cw = grid.w / cube.w;
    lay.n_cubes = ct * ch * cw;
    lay.cube_size = cube.volume();
    const int64_t n = grid.tokens();
    lay.token_to_cube.assign(static_cast<size_t>(n), 0);
    lay.cube_to_tokens.assign(static_cast<size_t>(lay.n_cubes), {});
    lay.destination_of_cube.assign(static_cast<size_t>(lay.n_cubes), 0);

    for (int64_t c = 0; c < lay.n_cubes; ++c) {
        const int64_t bt = c / (ch * cw);
        const int64_t bh = (c / cw) % ch;
        const int64_t bw = c % cw;
        auto& toks = lay.cube_to_tokens[static_cast<size_t>(c)];
        toks.reserve(static_cast<size_t>(lay.cube_size));
        for (int64_t dt = 0; dt < cube.t; ++dt)
            for (int64_t dh = 0; dh < cube.h; ++dh)
                for (int64_t dw = 0; dw < cube.w; ++dw) {
                    const TokenCoord tc{bt * cube.t + dt, bh * cube.h + dh, bw * cube.w + dw};
                    const int64_t tok = flatten_token(grid, tc);
                    toks.push_back(static_cast<int32_t>(tok));
                    lay.token_to_cube[static_cast<size_t>(tok)] = static_cast<int32_t>(c);
                }
        const TokenCoord center{bt * cube.t + cube.t / 2, bh * cube.h + cube.h / 2, bw * cube.w + cube.w / 2};
        lay.destination_of_cube[static_cast<size_t>(c)] = static_cast<int32_t>(flatten_token(grid, center));
    }
    return lay;
}

// Grouping abstraction shared by 3D cube layouts and the 1D chunking used
// on merged sequences (where the regular grid no longer exists). Groups are
// disjoint, cover 0..n-1, and keep a fixed token order.
struct BlockGrouping {
    int64_t n_tokens = 0;
    std::vector<std::vector<int32_t>> groups;
    std::vector<int32_t> group_of;

    int64_t n_groups() const { return static_cast<int64_t>(groups.size()); }

    static BlockGrouping from_layout(const CubeLayout& lay) {
        BlockGrouping g;
        g.n_tokens = lay.n_tokens();
        g.groups = lay.cube_to_tokens;
        g.group_of = lay.token_to_cube;
        return g;
    }

    // Contiguous chunks of the given size; the final chunk may be short.
    static BlockGrouping chunked(int64_t n_tokens, int64_t chunk) {
        if (n_tokens < 1) throw ParamError("chunked grouping needs n_tokens >= 1");
        if (chunk < 1) throw ParamError("chunk size must be >= 1");
        BlockGrouping g;
        g.n_tokens = n_tokens;
        g.group_of.assign(static_cast<size_t>(n_tokens), 0);
        for (int64_t start = 0; start < n_tokens; start += chunk) {
            const int64_t end = std::min(n_tokens, start + chunk);
            std::vector<int32_t> toks;
            toks.reserve(static_cast<size_t>(end - start));
            for (int64_t i = start; i < end; ++i) {
                toks.push_back(static_cast<int32_t>(i));
                g.group_of[static_cast<size_t>(i)] = static_cast<int32_t>(g.groups.size());
            }
            g.groups.push_back(std::move(toks));
        }
        return g;
    }
};

// Row g is the arithmetic mean of the rows of group g's tokens, summed in
// the grouping's fixed token order (bit-deterministic).
inline Matrix pool_groups(const Matrix& tokens, const BlockGrouping& grouping) {
    if (tokens.rows != grouping.n_tokens)
        throw ShapeError("pool_groups: matrix rows " + std::to_string(tokens.rows) + " != grouping tokens " +
                         std::to_string(grouping.n_tokens));
    Matrix out(grouping.n_groups(), tokens.cols);
    std::vector<double> acc(static_cast<size_t>(tokens.cols));
    for (int64_t g = 0; g < grouping.n_groups(); ++g) {
        std::fill(acc.begin(), acc.end(), 0.0);
        const auto& toks = grouping.groups[static_cast<size_t>(g)];
        for (int32_t tok : toks) {
            const float* row = tokens.row(tok);
            for (int64_t c = 0; c < tokens.cols; ++c) acc[static_cast<size_t>(c)] += row[c];
        }
        const double inv = 1.0 / static_cast<double>(toks.size());
        float* orow = out.row(g);
        for (int64_t c = 0; c < tokens.cols; ++c) orow[c] = static_cast<float>(acc[static_cast<size_t>(c)] * inv);
    }
    return out;
}

inline Matrix pool_cubes(const Matrix& tokens, const CubeLayout& layout) {
    return pool_groups(tokens, BlockGrouping::from_layout(layout));
}

} // namespace sparsegrid
