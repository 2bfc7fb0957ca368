// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sparsegrid/attention.hpp"
#include "sparsegrid/cost_model.hpp"
#include "sparsegrid/cube_grid.hpp"
#include "sparsegrid/entropy_policy.hpp"
#include "sparsegrid/hash.hpp"
#include "sparsegrid/tensor_io.hpp"
#include "sparsegrid/token_grid.hpp"
#include "sparsegrid/token_merge.hpp"

namespace sparsegrid {

enum class PipelineMode { dense, static_sparse, dynamic_sparse, reversed_schedule };

inline const char* to_string(PipelineMode m) {
    switch (m) {
        case PipelineMode::dense: return "dense";
        case PipelineMode::static_sparse: return "static-sparse";
        case PipelineMode::dynamic_sparse: return "dynamic-sparse";
        case PipelineMode::reversed_schedule: return "reversed-schedule";
    }
    return "dense";
}

inline PipelineMode pipeline_mode_from_string(const std::string& s) {
    if (s == "dense") return PipelineMode::dense;
    if (s == "static-sparse") return PipelineMode::static_sparse;
    if (s == "dynamic-sparse") return PipelineMode::dynamic_sparse;
    if (s == "reversed-schedule") return PipelineMode::reversed_schedule;
    throw ValidationError("unknown pipeline mode: " + s);
}

struct PipelineConfig {
    GridDims grid;
    CubeDims cube;
    int64_t n_layers = 1;
    int64_t n_heads = 1;
    PipelineMode mode = PipelineMode::dynamic_sparse;
    uint64_t weight_seed = 1;
    SeededNoiseSpec noise;
    BaseSchedule schedule;
    PolicyParams policy;
    int threads = 1;
    bool global_merge = false;
    bool trace_merge_plans = true;
    int64_t baseline_steps = 0;  // dense reference step count; 0 means |schedule|
    double mlp_expansion = 4.0;

    void validate() const {
        grid.validate();
        schedule.validate();
        policy.validate();
        AttentionConfig{n_heads, grid.d}.validate();
        if (n_layers < 1) throw ValidationError("pipeline needs n_layers >= 1");
        if (threads < 1) throw ValidationError("pipeline needs threads >= 1");
        if (baseline_steps < 0) throw ValidationError("baseline_steps must be >= 0");
        if (!(mlp_expansion > 0.0)) throw ValidationError("mlp_expansion must be > 0");
    }
};

struct LayerWeights {
    ProjectionWeights attn;
    Matrix w_in;   // d x hidden
    Matrix w_out;  // hidden x d
};

inline std::vector<LayerWeights> make_layer_weights(uint64_t seed, int64_t n_layers, int64_t d_model,
                                                    double mlp_expansion) {
    const int64_t hidden = std::max<int64_t>(1, std::llround(mlp_expansion * static_cast<double>(d_model)));
    std::vector<LayerWeights> out;
    out.reserve(static_cast<size_t>(n_layers));
    for (int64_t l = 0; l < n_layers; ++l) {
        LayerWeights lw;
        lw.attn = random_projections(mix_seed(seed, static_cast<uint64_t>(l * 8)), d_model);
        lw.w_in = random_matrix(mix_seed(seed, static_cast<uint64_t>(l * 8 + 4)), d_model, hidden,
                                1.0 / std::sqrt(static_cast<double>(d_model)));
        lw.w_out = random_matrix(mix_seed(seed, static_cast<uint64_t>(l * 8 + 5)), hidden, d_model,
                                 1.0 / std::sqrt(static_cast<double>(hidden)));
        out.push_back(std::move(lw));
    }
    return out;
}

inline Matrix mlp_forward(const Matrix& z, const LayerWeights& lw, int threads) {
    Matrix h = matmul(z, lw.w_in, threads);
    for (float& v : h.data) v = gelu(v);
    return matmul(h, lw.w_out, threads);
}

struct MergeAudit {
    std::vector<int32_t> merged;        // M
    std::vector<int32_t> assigned;      // destination per merged source
    std::vector<int32_t> unmerged;      // U
    std::vector<int32_t> destinations;  // B
};

struct LayerTrace {
    double entropy = 0.0;
    double rho_attn = 0.0;
    double rho_token = 0.0;
    int64_t k_cubes = 0;
    int64_t n_cubes = 0;
    int64_t merged_len = 0;
    uint64_t allowed_pairs = 0;
    double mask_density = 0.0;
    FlopBreakdown flops;
    double wall_ms = 0.0;
    std::optional<MergeAudit> merge_audit;
};

struct StepTrace {
    int64_t step_id = 0;
    std::string checksum;
    std::vector<LayerTrace> layers;
};

struct TraceRecord {
    PipelineConfig config;
    std::vector<StepTrace> steps;
    CostReport cost;
};

struct PipelineResult {
    TokenGrid final_grid;
    TraceRecord trace;
};

struct RunOptions {
    std::optional<std::filesystem::path> attn_dump_dir;
    int64_t dump_sample_index = 0;
};

namespace detail {

// Per-layer ratios for one step. Dynamic mode allocates from the previous
// step's recorded entropies; the first step warm-starts at the base ratios.
struct StepRatios {
    std::vector<double> attn;
    std::vector<double> token;
};

inline StepRatios step_ratios(const PipelineConfig& cfg, const BaseSchedule& sched, int64_t step_index,
                              const std::vector<double>& prev_entropy, const GridBudget& budget) {
    const int64_t L = cfg.n_layers;
    StepRatios out;
    out.attn.assign(static_cast<size_t>(L), 0.0);
    out.token.assign(static_cast<size_t>(L), 0.0);
    if (cfg.mode == PipelineMode::dense) return out;

    const double base_attn = sched.rho_attn_base[static_cast<size_t>(step_index)];
    const double base_token = sched.rho_token_base[static_cast<size_t>(step_index)];
    const bool dynamic = cfg.mode == PipelineMode::dynamic_sparse && !prev_entropy.empty();
    if (!dynamic) {
        for (int64_t l = 0; l < L; ++l) {
            out.attn[static_cast<size_t>(l)] = std::clamp(base_attn, cfg.policy.rho_attn_min, cfg.policy.rho_attn_max);
            out.token[static_cast<size_t>(l)] =
                std::clamp(base_token, cfg.policy.rho_token_min, cfg.policy.rho_token_max);
        }
        return out;
    }
    EntropyProfile profile;
    profile.h = {prev_entropy};
    profile.n_tokens_used = budget.n_tokens;
    BaseSchedule one;
    one.steps = {sched.steps[static_cast<size_t>(step_index)]};
    one.rho_attn_base = {base_attn};
    one.rho_token_base = {base_token};
    const SparsityAllocation alloc = allocate(profile, one, cfg.policy, budget);
    out.attn = alloc.attn.rho.front();
    out.token = alloc.token.rho.front();
    return out;
}

} // namespace detail

// Toy DiT-style forward loop: per step and layer, build a merge plan from
// key descriptors, merge, run top-k block-sparse attention over 1D chunks of
// the merged order (chunk = cube volume; the 3D grid no longer exists after
// merging), apply MLP with residuals, unmerge, and record the entropy that
// drives the next step's allocation.
inline PipelineResult run_pipeline(const PipelineConfig& cfg, const RunOptions& opts = {}) {
    cfg.validate();
    const CubeLayout layout = build_layout(cfg.grid, cfg.cube);
    const int64_t n = cfg.grid.tokens();
    const int64_t d = cfg.grid.d;
    const AttentionConfig acfg{cfg.n_heads, d};
    const GridBudget budget{n, layout.n_cubes};
    const std::vector<LayerWeights> weights = make_layer_weights(cfg.weight_seed, cfg.n_layers, d, cfg.mlp_expansion);
    const BaseSchedule sched =
        cfg.mode == PipelineMode::reversed_schedule ? cfg.schedule.reversed() : cfg.schedule;
    const int64_t n_steps = sched.n_steps();

    Matrix z = generate_grid(cfg.noise, cfg.grid).to_matrix();

    TraceRecord trace;
    trace.config = cfg;
    trace.steps.reserve(static_cast<size_t>(n_steps));
    std::vector<double> prev_entropy;
    std::vector<std::vector<uint64_t>> pair_matrix;
    std::vector<std::vector<int64_t>> merged_matrix;

    for (int64_t s = 0; s < n_steps; ++s) {
        if (s > 0) {
            // stand-in denoising update: blend the previous output with fresh
            // step-seeded noise so activations vary across steps
            SeededNoiseSpec step_noise = cfg.noise;
            step_noise.seed = mix_seed(cfg.noise.seed, static_cast<uint64_t>(s));
            const Matrix fresh = generate_grid(step_noise, cfg.grid).to_matrix();
            for (size_t i = 0; i < z.data.size(); ++i) z.data[i] = 0.5f * z.data[i] + 0.5f * fresh.data[i];
        }
        const detail::StepRatios ratios = detail::step_ratios(cfg, sched, s, prev_entropy, budget);

        StepTrace st;
        st.step_id = sched.steps[static_cast<size_t>(s)];
        st.layers.resize(static_cast<size_t>(cfg.n_layers));
        std::vector<double> entropies(static_cast<size_t>(cfg.n_layers), 0.0);
        std::vector<uint64_t> step_pairs(static_cast<size_t>(cfg.n_layers), 0);
        std::vector<int64_t> step_merged(static_cast<size_t>(cfg.n_layers), 0);

        for (int64_t l = 0; l < cfg.n_layers; ++l) {
            const auto t0 = std::chrono::steady_clock::now();
            const double rho_attn = ratios.attn[static_cast<size_t>(l)];
            const double rho_token = ratios.token[static_cast<size_t>(l)];
            const LayerWeights& lw = weights[static_cast<size_t>(l)];
            try {
                const Matrix keys = matmul(z, lw.attn.wk, cfg.threads);
                const Matrix desc = token_descriptors(keys, cfg.n_heads);
                const MergePlan plan = build_merge_plan(desc, layout, rho_token, cfg.global_merge);
                Matrix zm = merge(z, plan);

                const BlockGrouping grouping = BlockGrouping::chunked(zm.rows, layout.cube_size);
                const int64_t n_groups = grouping.n_groups();
                const int64_t k_groups = std::clamp<int64_t>(
                    std::llround((1.0 - rho_attn) * static_cast<double>(n_groups)), 1, n_groups);

                CubeSparseResult att =
                    grouped_topk_attention(zm, lw.attn, acfg, grouping, k_groups, /*keep_weights=*/true, cfg.threads);
                add_inplace(zm, att.output);
                const Matrix mlp_out = mlp_forward(zm, lw, cfg.threads);
                add_inplace(zm, mlp_out);
                z = unmerge(zm, plan);

                const double h = attention_entropy(*att.weights);
                entropies[static_cast<size_t>(l)] = h;

                if (opts.attn_dump_dir) {
                    const AttentionWeights& aw = *att.weights;
                    TokenGrid dump(GridDims{aw.n_heads, aw.n_tokens, aw.n_tokens, 1});
                    dump.data = aw.values;
                    const std::string name = "attn_step" + std::to_string(st.step_id) + "_layer" + std::to_string(l) +
                                             "_sample" + std::to_string(opts.dump_sample_index) + ".tensor";
                    write_tensor(dump, *opts.attn_dump_dir / name);
                }

                LayerTrace& lt = st.layers[static_cast<size_t>(l)];
                lt.entropy = h;
                lt.rho_attn = rho_attn;
                lt.rho_token = rho_token;
                lt.k_cubes = k_groups;
                lt.n_cubes = n_groups;
                lt.merged_len = plan.merged_len();
                lt.allowed_pairs = att.mask.allowed_pair_count();
                lt.mask_density = att.mask.density();
                lt.flops.attention = 4.0 * static_cast<double>(d) * static_cast<double>(lt.allowed_pairs);
                lt.flops.projection = projection_flops(lt.merged_len, d);
                lt.flops.mlp = mlp_flops(lt.merged_len, d, cfg.mlp_expansion);
                if (cfg.trace_merge_plans) {
                    MergeAudit audit;
                    audit.merged = plan.merged;
                    audit.assigned.reserve(plan.merged.size());
                    for (int32_t tok : plan.merged)
                        audit.assigned.push_back(plan.dest_of[static_cast<size_t>(tok)]);
                    audit.unmerged = plan.unmerged;
                    audit.destinations = plan.destinations;
                    lt.merge_audit = std::move(audit);
                }
                step_pairs[static_cast<size_t>(l)] = lt.allowed_pairs;
                step_merged[static_cast<size_t>(l)] = lt.merged_len;
                lt.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
            } catch (const Error& e) {
                throw Error("step " + std::to_string(st.step_id) + " layer " + std::to_string(l) + ": " + e.what());
            }
        }
        st.checksum = hex64(fnv1a64(z.data));
        trace.steps.push_back(std::move(st));
        pair_matrix.push_back(std::move(step_pairs));
        merged_matrix.push_back(std::move(step_merged));
        prev_entropy = std::move(entropies);
    }

    CostConfig ccfg;
    ccfg.n_layers = cfg.n_layers;
    ccfg.d_model = d;
    ccfg.n_heads = cfg.n_heads;
    ccfg.steps_dense = cfg.baseline_steps > 0 ? cfg.baseline_steps : n_steps;
    ccfg.steps_sparse = n_steps;
    ccfg.mlp_expansion = cfg.mlp_expansion;
    trace.cost = pipeline_cost_exact(pair_matrix, merged_matrix, n, ccfg);

    return PipelineResult{grid_from_matrix(z, cfg.grid), std::move(trace)};
}

// Runs the pipeline once per seed and aggregates layer-wise entropy bands at
// each step.
inline std::vector<EntropyAggregateRow> entropy_ablation(const PipelineConfig& cfg,
                                                         const std::vector<uint64_t>& seeds) {
    if (seeds.empty()) throw ParamError("entropy_ablation needs at least one seed");
    std::vector<EntropySample> samples;
    for (uint64_t seed : seeds) {
        PipelineConfig one = cfg;
        one.noise.seed = seed;
        const PipelineResult res = run_pipeline(one);
        for (const StepTrace& st : res.trace.steps)
            for (size_t l = 0; l < st.layers.size(); ++l)
                samples.push_back(EntropySample{st.step_id, static_cast<int64_t>(l), st.layers[l].entropy,
                                                st.layers[l].merged_len});
    }
    return aggregate_entropy_samples(samples);
}

inline std::vector<EntropyAggregateRow> entropy_ablation(const PipelineConfig& cfg, int64_t n_samples) {
    if (n_samples < 1) throw ParamError("entropy_ablation needs n_samples >= 1");
    std::vector<uint64_t> seeds;
    seeds.reserve(static_cast<size_t>(n_samples));
    for (int64_t i = 0; i < n_samples; ++i) seeds.push_back(cfg.noise.seed + static_cast<uint64_t>(i));
    return entropy_ablation(cfg, seeds);
}

} // namespace sparsegrid
