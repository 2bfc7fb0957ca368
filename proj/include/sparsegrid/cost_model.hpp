// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sparsegrid/entropy_policy.hpp"
#include "sparsegrid/errors.hpp"

namespace sparsegrid {

// Published measured wall-clock DiT denoising speedup of the reference sparse
// video DiT system (0.95 attention sparsity, 50 -> 3 steps, ~131K tokens).
// The analytical FLOP model ignores non-masked costs and kernel overheads, so
// its ratios upper-bound this number.
inline constexpr double kReferenceDitWallclockSpeedup = 83.3;

// FLOP convention: one multiply-add = 2 FLOPs; softmax and normalization
// excluded. Projections cost 6*N*d^2 for Q,K,V plus 2*N*d^2 for the output;
// the quadratic score+value term is 4*N^2*d scaled by mask density.
struct CostConfig {
    int64_t n_layers = 1;
    int64_t d_model = 1;
    int64_t n_heads = 1;
    int64_t steps_dense = 1;
    int64_t steps_sparse = 1;
    double mlp_expansion = 4.0;
    double fixed_overhead_flops = 0.0;  // per-video cost outside the denoiser

    void validate() const {
        if (n_layers < 1 || d_model < 1 || n_heads < 1 || steps_dense < 1 || steps_sparse < 1)
            throw ParamError("cost config counts must all be >= 1");
        if (!(mlp_expansion > 0.0)) throw ParamError("mlp_expansion must be > 0");
        if (fixed_overhead_flops < 0.0) throw ParamError("fixed_overhead_flops must be >= 0");
    }
};

inline double attention_quadratic_flops(int64_t n_tokens, double density, int64_t d_model) {
    return 4.0 * static_cast<double>(n_tokens) * static_cast<double>(n_tokens) * static_cast<double>(d_model) *
           density;
}

inline double projection_flops(int64_t n_tokens, int64_t d_model) {
    return 8.0 * static_cast<double>(n_tokens) * static_cast<double>(d_model) * static_cast<double>(d_model);
}

inline double mlp_flops(int64_t n_tokens, int64_t d_model, double expansion) {
    return 4.0 * expansion * static_cast<double>(n_tokens) * static_cast<double>(d_model) *
           static_cast<double>(d_model);
}

// Full attention cost at the given mask density: quadratic term plus all four
// projections.
inline double attention_flops(int64_t n_tokens, double density, const CostConfig& cfg) {
    cfg.validate();
    if (n_tokens < 1) throw ParamError("attention_flops: n_tokens must be >= 1");
    if (!(density > 0.0 && density <= 1.0)) throw ParamError("attention_flops: density must lie in (0,1]");
    return attention_quadratic_flops(n_tokens, density, cfg.d_model) + projection_flops(n_tokens, cfg.d_model);
}

struct FlopBreakdown {
    double attention = 0.0;   // quadratic score+value term
    double projection = 0.0;  // Q/K/V/O projections
    double mlp = 0.0;

    double total() const { return attention + projection + mlp; }
};

struct CostReport {
    std::vector<std::vector<FlopBreakdown>> sparse_per_step_layer;
    FlopBreakdown dense_total;
    FlopBreakdown sparse_total;
    double speedup_attention = 1.0;  // quadratic-term ratio
    double speedup_total = 1.0;
    double speedup_total_with_overhead = 1.0;
    double reference_dit_wallclock_speedup = kReferenceDitWallclockSpeedup;
    bool model_upper_bounds_reference = true;
};

namespace detail {

// Shared core over precomputed quadratic terms. Dense baseline: steps_dense
// full-attention steps over n_tokens at density 1.
inline CostReport cost_report_from_quadratic(const std::vector<std::vector<double>>& quadratic,
                                             const std::vector<std::vector<int64_t>>& merged_len,
                                             int64_t n_tokens, const CostConfig& cfg) {
    cfg.validate();
    if (n_tokens < 1) throw ParamError("pipeline_cost: n_tokens must be >= 1");
    if (quadratic.size() != static_cast<size_t>(cfg.steps_sparse) || merged_len.size() != quadratic.size())
        throw ShapeError("pipeline_cost: matrices must have steps_sparse rows");

    CostReport report;
    report.sparse_per_step_layer.resize(quadratic.size());
    for (size_t t = 0; t < quadratic.size(); ++t) {
        if (quadratic[t].size() != static_cast<size_t>(cfg.n_layers) || merged_len[t].size() != quadratic[t].size())
            throw ShapeError("pipeline_cost: matrices must have n_layers columns");
        auto& row = report.sparse_per_step_layer[t];
        row.resize(quadratic[t].size());
        for (size_t l = 0; l < quadratic[t].size(); ++l) {
            const int64_t n = merged_len[t][l];
            if (n < 1 || n > n_tokens) throw ParamError("pipeline_cost: merged length must lie in [1, n_tokens]");
            if (!(quadratic[t][l] > 0.0)) throw ParamError("pipeline_cost: attention term must be positive");
            row[l].attention = quadratic[t][l];
            row[l].projection = projection_flops(n, cfg.d_model);
            row[l].mlp = mlp_flops(n, cfg.d_model, cfg.mlp_expansion);
            report.sparse_total.attention += row[l].attention;
            report.sparse_total.projection += row[l].projection;
            report.sparse_total.mlp += row[l].mlp;
        }
    }

    const double steps_layers = static_cast<double>(cfg.steps_dense) * static_cast<double>(cfg.n_layers);
    report.dense_total.attention = steps_layers * attention_quadratic_flops(n_tokens, 1.0, cfg.d_model);
    report.dense_total.projection = steps_layers * projection_flops(n_tokens, cfg.d_model);
    report.dense_total.mlp = steps_layers * mlp_flops(n_tokens, cfg.d_model, cfg.mlp_expansion);

    report.speedup_attention = report.dense_total.attention / report.sparse_total.attention;
    report.speedup_total = report.dense_total.total() / report.sparse_total.total();
    report.speedup_total_with_overhead = (report.dense_total.total() + cfg.fixed_overhead_flops) /
                                         (report.sparse_total.total() + cfg.fixed_overhead_flops);
    return report;
}

} // namespace detail

// Sparse side given per (step, layer) mask densities and token counts after
// merging.
inline CostReport pipeline_cost(const std::vector<std::vector<double>>& density,
                                const std::vector<std::vector<int64_t>>& merged_len, int64_t n_tokens,
                                const CostConfig& cfg) {
    if (density.size() != merged_len.size()) throw ShapeError("pipeline_cost: matrices must have equal rows");
    std::vector<std::vector<double>> quadratic(density.size());
    for (size_t t = 0; t < density.size(); ++t) {
        if (density[t].size() != merged_len[t].size())
            throw ShapeError("pipeline_cost: matrices must have equal columns");
        quadratic[t].resize(density[t].size());
        for (size_t l = 0; l < density[t].size(); ++l) {
            if (!(density[t][l] > 0.0 && density[t][l] <= 1.0))
                throw ParamError("pipeline_cost: density must lie in (0,1]");
            quadratic[t][l] = attention_quadratic_flops(merged_len[t][l], density[t][l], cfg.d_model);
        }
    }
    return detail::cost_report_from_quadratic(quadratic, merged_len, n_tokens, cfg);
}

// Exact form over realized allowed-pair counts (4*d*pairs is an integer, so
// totals are order-independent and schedule permutations sum identically).
inline CostReport pipeline_cost_exact(const std::vector<std::vector<uint64_t>>& allowed_pairs,
                                      const std::vector<std::vector<int64_t>>& merged_len, int64_t n_tokens,
                                      const CostConfig& cfg) {
    if (allowed_pairs.size() != merged_len.size()) throw ShapeError("pipeline_cost: matrices must have equal rows");
    std::vector<std::vector<double>> quadratic(allowed_pairs.size());
    for (size_t t = 0; t < allowed_pairs.size(); ++t) {
        if (allowed_pairs[t].size() != merged_len[t].size())
            throw ShapeError("pipeline_cost: matrices must have equal columns");
        quadratic[t].resize(allowed_pairs[t].size());
        for (size_t l = 0; l < allowed_pairs[t].size(); ++l)
            quadratic[t][l] = 4.0 * static_cast<double>(cfg.d_model) * static_cast<double>(allowed_pairs[t][l]);
    }
    return detail::cost_report_from_quadratic(quadratic, merged_len, n_tokens, cfg);
}

// Convenience wrapper for unmerged grids with uniform cube granularity:
// density per (step, layer) follows k_cubes/n_cubes from the allocation, and
// merged lengths are n_tokens - k_token.
inline CostReport pipeline_cost(const SparsityAllocation& alloc, const CostConfig& cfg) {
    std::vector<std::vector<double>> density(alloc.k_cubes.size());
    std::vector<std::vector<int64_t>> merged_len(alloc.k_token.size());
    for (size_t t = 0; t < alloc.k_cubes.size(); ++t) {
        density[t].resize(alloc.k_cubes[t].size());
        merged_len[t].resize(alloc.k_token[t].size());
        for (size_t l = 0; l < alloc.k_cubes[t].size(); ++l) {
            density[t][l] = static_cast<double>(alloc.k_cubes[t][l]) / static_cast<double>(alloc.n_cubes);
            merged_len[t][l] = alloc.n_tokens - alloc.k_token[t][l];
        }
    }
    return pipeline_cost(density, merged_len, alloc.n_tokens, cfg);
}

} // namespace sparsegrid
