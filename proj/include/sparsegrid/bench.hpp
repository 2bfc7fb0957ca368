// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "sparsegrid/attention.hpp"
#include "sparsegrid/cost_model.hpp"
#include "sparsegrid/cube_grid.hpp"
#include "sparsegrid/errors.hpp"
#include "sparsegrid/token_grid.hpp"

namespace sparsegrid {

// Sweep of cube-sparse attention wall time across sequence length and
// sparsity. Each token count N maps to a (frames, side, side) grid with
// side = sqrt(N / frames); the sparsity-0 row of the same N is the speedup
// baseline.
struct BenchSpec {
    std::vector<int64_t> token_counts;
    std::vector<double> sparsity_levels;
    int64_t repeats = 3;
    int64_t warmup = 1;
    int64_t frames = 16;
    CubeDims cube{4, 4, 4};
    int64_t d_model = 64;
    int64_t n_heads = 4;
    int threads = 1;
    uint64_t seed = 42;

    GridDims grid_for(int64_t n_tokens) const {
        if (n_tokens < 1 || n_tokens % frames != 0)
            throw ValidationError("token count " + std::to_string(n_tokens) + " not divisible by frames " +
                                  std::to_string(frames));
        const int64_t hw = n_tokens / frames;
        const int64_t side = static_cast<int64_t>(std::llround(std::sqrt(static_cast<double>(hw))));
        if (side * side != hw)
            throw ValidationError("token count " + std::to_string(n_tokens) +
                                  " is not frames * side^2 for frames = " + std::to_string(frames));
        const GridDims g{frames, side, side, d_model};
        if (g.t % cube.t != 0 || g.h % cube.h != 0 || g.w % cube.w != 0)
            throw ValidationError("token count " + std::to_string(n_tokens) + " yields grid not divisible by cube");
        return g;
    }

    void validate() const {
        if (token_counts.empty()) throw ValidationError("bench spec needs at least one token count");
        if (sparsity_levels.empty()) throw ValidationError("bench spec needs at least one sparsity level");
        if (repeats < 3) throw ValidationError("bench spec needs repeats >= 3");
        if (warmup < 0) throw ValidationError("bench spec needs warmup >= 0");
        if (frames < 1 || d_model < 1 || n_heads < 1) throw ValidationError("bench spec counts must be >= 1");
        if (threads < 1) throw ValidationError("bench spec needs threads >= 1");
        for (double s : sparsity_levels)
            if (!(s >= 0.0 && s <= 1.0)) throw ValidationError("sparsity levels must lie in [0,1]");
        AttentionConfig{n_heads, d_model}.validate();
        for (int64_t n : token_counts) (void)grid_for(n);
    }
};

struct BenchRow {
    int64_t n_tokens = 0;
    double sparsity = 0.0;
    int64_t k_cubes = 0;
    int64_t n_cubes = 0;
    double mean_wall_ms = 0.0;
    double min_wall_ms = 0.0;
    double flops_modeled = 0.0;
    double speedup_vs_dense = 1.0;
};

inline std::vector<BenchRow> run_bench(const BenchSpec& spec) {
    spec.validate();
    const AttentionConfig cfg{spec.n_heads, spec.d_model};
    std::vector<BenchRow> rows;

    for (int64_t n_tokens : spec.token_counts) {
        const GridDims grid = spec.grid_for(n_tokens);
        const CubeLayout layout = build_layout(grid, spec.cube);
        SeededNoiseSpec noise;
        noise.seed = mix_seed(spec.seed, static_cast<uint64_t>(n_tokens));
        const Matrix z = generate_grid(noise, grid).to_matrix();
        const ProjectionWeights weights = random_projections(mix_seed(spec.seed, 0xBEEF), spec.d_model);

        // the sparsity-0 measurement is the per-N baseline
        std::vector<double> levels = spec.sparsity_levels;
        const bool has_zero = std::find(levels.begin(), levels.end(), 0.0) != levels.end();
        double baseline_ms = 0.0;

        std::vector<BenchRow> n_rows;
        std::vector<double> order = levels;
        if (!has_zero) order.insert(order.begin(), 0.0);
        for (double sparsity : order) {
            const int64_t k_cubes = std::clamp<int64_t>(
                std::llround((1.0 - sparsity) * static_cast<double>(layout.n_cubes)), 1, layout.n_cubes);
            double total_ms = 0.0, min_ms = 0.0;
            uint64_t pairs = 0;
            for (int64_t rep = 0; rep < spec.warmup + spec.repeats; ++rep) {
                const auto t0 = std::chrono::steady_clock::now();
                const CubeSparseResult res =
                    cube_sparse_attention(z, weights, cfg, layout, k_cubes, /*keep_weights=*/false, spec.threads);
                const double ms =
                    std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
                pairs = res.mask.allowed_pair_count();
                if (rep < spec.warmup) continue;
                total_ms += ms;
                min_ms = min_ms == 0.0 ? ms : std::min(min_ms, ms);
            }
            BenchRow row;
            row.n_tokens = n_tokens;
            row.sparsity = sparsity;
            row.k_cubes = k_cubes;
            row.n_cubes = layout.n_cubes;
            row.mean_wall_ms = total_ms / static_cast<double>(spec.repeats);
            row.min_wall_ms = min_ms;
            const double density = static_cast<double>(pairs) /
                                   (static_cast<double>(n_tokens) * static_cast<double>(n_tokens));
            CostConfig ccfg;
            ccfg.d_model = spec.d_model;
            ccfg.n_heads = spec.n_heads;
            row.flops_modeled = attention_flops(n_tokens, density, ccfg);
            if (sparsity == 0.0) baseline_ms = row.mean_wall_ms;
            row.speedup_vs_dense = baseline_ms / row.mean_wall_ms;
            n_rows.push_back(row);
        }
        for (const BenchRow& row : n_rows)
            if (has_zero || row.sparsity != 0.0) rows.push_back(row);
    }
    return rows;
}

inline std::string bench_csv(const std::vector<BenchRow>& rows, const BenchSpec& spec) {
    char host[256] = "unknown";
    gethostname(host, sizeof(host) - 1);
    std::ostringstream out;
    out << "n_tokens,sparsity,k_cubes,n_cubes,repeats,warmup,threads,mean_wall_ms,min_wall_ms,"
           "flops_modeled,speedup_vs_dense,host\n";
    out.precision(17);
    for (const BenchRow& r : rows)
        out << r.n_tokens << ',' << r.sparsity << ',' << r.k_cubes << ',' << r.n_cubes << ',' << spec.repeats << ','
            << spec.warmup << ',' << spec.threads << ',' << r.mean_wall_ms << ',' << r.min_wall_ms << ','
            << r.flops_modeled << ',' << r.speedup_vs_dense << ',' << host << '\n';
    return out.str();
}

} // namespace sparsegrid
