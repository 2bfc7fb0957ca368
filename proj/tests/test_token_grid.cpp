// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "sparsegrid/token_grid.hpp"

using namespace sparsegrid;

namespace {

// mean cosine similarity between horizontally adjacent tokens
double adjacent_cosine(const TokenGrid& g) {
    const GridDims& d = g.dims;
    double sum = 0.0;
    int64_t count = 0;
    for (int64_t t = 0; t < d.t; ++t)
        for (int64_t x = 0; x < d.h; ++x)
            for (int64_t y = 0; y + 1 < d.w; ++y) {
                const int64_t a = flatten_token(d, {t, x, y});
                const int64_t b = flatten_token(d, {t, x, y + 1});
                double dot = 0.0, na = 0.0, nb = 0.0;
                for (int64_t c = 0; c < d.d; ++c) {
                    dot += static_cast<double>(g.at(a, c)) * g.at(b, c);
                    na += static_cast<double>(g.at(a, c)) * g.at(a, c);
                    nb += static_cast<double>(g.at(b, c)) * g.at(b, c);
                }
                sum += dot / (std::sqrt(na) * std::sqrt(nb) + 1e-12);
                ++count;
            }
    return sum / static_cast<double>(count);
}

} // namespace

TEST_CASE("generator is deterministic for a fixed spec") {
    const SeededNoiseSpec spec{7, NoiseDistribution::standard_normal, NoiseCorrelation::iid};
    const GridDims dims{1, 1, 1, 4};
    const TokenGrid a = generate_grid(spec, dims);
    const TokenGrid b = generate_grid(spec, dims);
    REQUIRE(a.data == b.data);
    REQUIRE(a.data.size() == 4);
}

TEST_CASE("different seeds produce different grids") {
    const GridDims dims{2, 2, 2, 8};
    const TokenGrid a = generate_grid({7, NoiseDistribution::standard_normal, NoiseCorrelation::iid}, dims);
    const TokenGrid b = generate_grid({8, NoiseDistribution::standard_normal, NoiseCorrelation::iid}, dims);
    REQUIRE(a.data != b.data);
}

TEST_CASE("block smoothing raises adjacent-token similarity over iid") {
    const GridDims dims{1, 4, 4, 1};
    SeededNoiseSpec iid{21, NoiseDistribution::standard_normal, NoiseCorrelation::iid};
    SeededNoiseSpec smooth = iid;
    smooth.correlation = NoiseCorrelation::block_smoothed;
    smooth.window = {1, 2, 2};
    const double c_iid = adjacent_cosine(generate_grid(iid, dims));
    const double c_smooth = adjacent_cosine(generate_grid(smooth, dims));
    REQUIRE(c_smooth > c_iid);
}

TEST_CASE("uniform-unit values lie in [0,1)") {
    const TokenGrid g =
        generate_grid({3, NoiseDistribution::uniform_unit, NoiseCorrelation::iid}, GridDims{2, 3, 3, 4});
    for (float v : g.data) {
        REQUIRE(v >= 0.0f);
        REQUIRE(v < 1.0f);
    }
}

TEST_CASE("invalid dims are rejected") {
    const SeededNoiseSpec spec{1, NoiseDistribution::standard_normal, NoiseCorrelation::iid};
    REQUIRE_THROWS_AS(generate_grid(spec, GridDims{0, 1, 1, 4}), DimensionError);
    REQUIRE_THROWS_AS(generate_grid(spec, GridDims{1 << 20, 1 << 20, 1 << 20, 16}), DimensionError);
}

TEST_CASE("flat-index bijection over random dims") {
    SplitMix64 rng(99);
    for (int trial = 0; trial < 20; ++trial) {
        const GridDims dims{1 + static_cast<int64_t>(rng.next_u64() % 16), 1 + static_cast<int64_t>(rng.next_u64() % 16),
                            1 + static_cast<int64_t>(rng.next_u64() % 16), 1};
        for (int64_t i = 0; i < dims.tokens(); ++i) {
            const TokenCoord c = unflatten_token(dims, i);
            REQUIRE(flatten_token(dims, c) == i);
            REQUIRE(c.t >= 0);
            REQUIRE(c.t < dims.t);
            REQUIRE(c.x < dims.h);
            REQUIRE(c.y < dims.w);
        }
    }
}
