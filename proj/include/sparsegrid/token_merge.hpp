// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "sparsegrid/cube_grid.hpp"
#include "sparsegrid/errors.hpp"
#include "sparsegrid/matrix.hpp"

namespace sparsegrid {

inline constexpr double kCosineNormEpsilon = 1e-8;

// The index sets and assignment that make merging exactly invertible:
// sources U stay, sources M fold into their cube's destination, B holds one
// destination per cube. Merged row order is [U ascending, then B in cube
// order].
struct MergePlan {
    int64_t n_tokens = 0;
    int64_t n_cubes = 0;
    double rho_token = 0.0;
    int64_t r = 0;                                      // number of merged sources
    std::vector<int32_t> unmerged;                      // U, ascending
    std::vector<int32_t> merged;                        // M, ascending
    std::vector<int32_t> destinations;                  // B, cube order
    std::vector<int32_t> dest_of;                       // [N]; assigned destination for i in M, else -1
    std::vector<int32_t> merged_order;                  // original token per merged row
    std::vector<int32_t> source_row;                    // [N]; merged row each token reads at unmerge
    std::vector<std::vector<int32_t>> sources_of_dest;  // aligned with destinations, each ascending

    int64_t merged_len() const { return n_tokens - r; }
};

// Head-averaged key descriptors: N x d_head mean over the head column
// blocks of an N x d key matrix.
inline Matrix token_descriptors(const Matrix& keys, int64_t n_heads) {
    if (n_heads < 1 || keys.cols % n_heads != 0)
        throw ShapeError("token_descriptors: n_heads must divide key columns");
    if (!all_finite(keys)) throw NumericError("token_descriptors: non-finite keys");
    const int64_t dk = keys.cols / n_heads;
    Matrix out(keys.rows, dk);
    for (int64_t i = 0; i < keys.rows; ++i) {
        const float* row = keys.row(i);
        float* orow = out.row(i);
        for (int64_t c = 0; c < dk; ++c) {
            double acc = 0.0;
            for (int64_t h = 0; h < n_heads; ++h) acc += row[h * dk + c];
            orow[c] = static_cast<float>(acc / static_cast<double>(n_heads));
        }
    }
    return out;
}

// Cosine similarity of each source to a destination, then greedy top-r
// selection (ties: lower token index first). Destinations are restricted to
// the source's own cube unless global_destinations is set.
inline MergePlan build_merge_plan(const Matrix& descriptors, const CubeLayout& layout, double rho_token,
                                  bool global_destinations = false) {
    if (!(rho_token >= 0.0 && rho_token <= 1.0)) throw ParamError("rho_token must lie in [0,1]");
    const int64_t n = layout.n_tokens();
    if (descriptors.rows != n) throw ShapeError("build_merge_plan: descriptor rows != layout tokens");

    MergePlan plan;
    plan.n_tokens = n;
    plan.n_cubes = layout.n_cubes;
    plan.rho_token = rho_token;
    plan.dest_of.assign(static_cast<size_t>(n), -1);

    std::vector<double> norm(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        double acc = 0.0;
        const float* row = descriptors.row(i);
        for (int64_t c = 0; c < descriptors.cols; ++c) acc += static_cast<double>(row[c]) * row[c];
        norm[static_cast<size_t>(i)] = std::sqrt(acc) + kCosineNormEpsilon;
    }
    const auto cosine = [&](int64_t i, int64_t j) {
        double acc = 0.0;
        const float* a = descriptors.row(i);
        const float* b = descriptors.row(j);
        for (int64_t c = 0; c < descriptors.cols; ++c) acc += static_cast<double>(a[c]) * b[c];
        return acc / (norm[static_cast<size_t>(i)] * norm[static_cast<size_t>(j)]);
    };

    plan.destinations.reserve(static_cast<size_t>(layout.n_cubes));
    for (int64_t c = 0; c < layout.n_cubes; ++c)
        plan.destinations.push_back(layout.destination_of_cube[static_cast<size_t>(c)]);

    // sources with their best destination and confidence
    struct Scored {
        double u;
        int32_t token;
        int32_t dest;
    };
    std::vector<Scored> sources;
    sources.reserve(static_cast<size_t>(n - layout.n_cubes));
    for (int64_t i = 0; i < n; ++i) {
        if (layout.is_destination(i)) continue;
        int32_t best_dest;
        double best_u;
        if (global_destinations) {
            best_dest = plan.destinations[0];
            best_u = cosine(i, best_dest);
            for (int64_t c = 1; c < layout.n_cubes; ++c) {
                const int32_t d = plan.destinations[static_cast<size_t>(c)];
                const double u = cosine(i, d);
                if (u > best_u) {
                    best_u = u;
                    best_dest = d;
                }
            }
        } else {
            best_dest = layout.destination_of_cube[static_cast<size_t>(layout.token_to_cube[static_cast<size_t>(i)])];
            best_u = cosine(i, best_dest);
        }
        sources.push_back(Scored{best_u, static_cast<int32_t>(i), best_dest});
    }

    std::vector<int32_t> order(sources.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int32_t>(i);
    std::sort(order.begin(), order.end(), [&](int32_t a, int32_t b) {
        return sources[static_cast<size_t>(a)].u > sources[static_cast<size_t>(b)].u ||
               (sources[static_cast<size_t>(a)].u == sources[static_cast<size_t>(b)].u &&
                sources[static_cast<size_t>(a)].token < sources[static_cast<size_t>(b)].token);
    });

    plan.r = std::min<int64_t>(static_cast<int64_t>(std::floor(rho_token * static_cast<double>(n))),
                               static_cast<int64_t>(sources.size()));

    std::vector<uint8_t> is_merged(static_cast<size_t>(n), 0);
    plan.merged.reserve(static_cast<size_t>(plan.r));
    for (int64_t s = 0; s < plan.r; ++s) {
        const Scored& sc = sources[static_cast<size_t>(order[static_cast<size_t>(s)])];
        plan.merged.push_back(sc.token);
        plan.dest_of[static_cast<size_t>(sc.token)] = sc.dest;
        is_merged[static_cast<size_t>(sc.token)] = 1;
    }
    std::sort(plan.merged.begin(), plan.merged.end());

    plan.unmerged.reserve(sources.size() - static_cast<size_t>(plan.r));
    for (const Scored& sc : sources)
        if (!is_merged[static_cast<size_t>(sc.token)]) plan.unmerged.push_back(sc.token);
    std::sort(plan.unmerged.begin(), plan.unmerged.end());

    // merged row order: U ascending then B in cube order
    plan.merged_order = plan.unmerged;
    plan.merged_order.insert(plan.merged_order.end(), plan.destinations.begin(), plan.destinations.end());

    std::vector<int32_t> row_of_token(static_cast<size_t>(n), -1);
    for (size_t row = 0; row < plan.merged_order.size(); ++row)
        row_of_token[static_cast<size_t>(plan.merged_order[row])] = static_cast<int32_t>(row);

    plan.sources_of_dest.assign(static_cast<size_t>(layout.n_cubes), {});
    std::vector<int32_t> dest_slot(static_cast<size_t>(n), -1);
    for (int64_t c = 0; c < layout.n_cubes; ++c)
        dest_slot[static_cast<size_t>(plan.destinations[static_cast<size_t>(c)])] = static_cast<int32_t>(c);
    for (int32_t tok : plan.merged)
        plan.sources_of_dest[static_cast<size_t>(dest_slot[static_cast<size_t>(plan.dest_of[static_cast<size_t>(tok)])])]
            .push_back(tok);

    plan.source_row.assign(static_cast<size_t>(n), -1);
    for (int64_t i = 0; i < n; ++i) {
        const int32_t owner = is_merged[static_cast<size_t>(i)] ? plan.dest_of[static_cast<size_t>(i)]
                                                                : static_cast<int32_t>(i);
        plan.source_row[static_cast<size_t>(i)] = row_of_token[static_cast<size_t>(owner)];
    }
    return plan;
}

// Destination rows become the mean of themselves plus their merged sources
// (destination first, then sources ascending); U rows pass through.
inline Matrix merge(const Matrix& z, const MergePlan& plan) {
    if (z.rows != plan.n_tokens) throw PlanError("merge: plan built for a different token count");
    Matrix out(plan.merged_len(), z.cols);
    int64_t row = 0;
    for (int32_t tok : plan.unmerged) {
        std::memcpy(out.row(row++), z.row(tok), static_cast<size_t>(z.cols) * sizeof(float));
    }
    std::vector<double> acc(static_cast<size_t>(z.cols));
    for (size_t c = 0; c < plan.destinations.size(); ++c) {
        const int32_t dest = plan.destinations[c];
        const auto& srcs = plan.sources_of_dest[c];
        if (srcs.empty()) {
            std::memcpy(out.row(row++), z.row(dest), static_cast<size_t>(z.cols) * sizeof(float));
            continue;
        }
        const float* drow = z.row(dest);
        for (int64_t j = 0; j < z.cols; ++j) acc[static_cast<size_t>(j)] = drow[j];
        for (int32_t s : srcs) {
            const float* srow = z.row(s);
            for (int64_t j = 0; j < z.cols; ++j) acc[static_cast<size_t>(j)] += srow[j];
        }
        const double denom = 1.0 + static_cast<double>(srcs.size());
        float* orow = out.row(row++);
        for (int64_t j = 0; j < z.cols; ++j) orow[j] = static_cast<float>(acc[static_cast<size_t>(j)] / denom);
    }
    return out;
}

// Exact inverse: U and B positions read their own merged rows; every merged
// source receives a bit-exact copy of its destination's row.
inline Matrix unmerge(const Matrix& z_merged, const MergePlan& plan) {
    if (z_merged.rows != plan.merged_len()) throw PlanError("unmerge: row count != merged length");
    Matrix out(plan.n_tokens, z_merged.cols);
    for (int64_t k = 0; k < plan.n_tokens; ++k)
        std::memcpy(out.row(k), z_merged.row(plan.source_row[static_cast<size_t>(k)]),
                    static_cast<size_t>(z_merged.cols) * sizeof(float));
    return out;
}

} // namespace sparsegrid
