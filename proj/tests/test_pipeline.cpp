// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "oracles.hpp"
#include "sparsegrid/pipeline.hpp"
#include "sparsegrid/serialization.hpp"

using namespace sparsegrid;
namespace fs = std::filesystem;

namespace {

PipelineConfig small_config(PipelineMode mode, double rho_attn, double rho_token, int64_t n_steps) {
    PipelineConfig cfg;
    cfg.grid = GridDims{2, 4, 4, 16};
    cfg.cube = CubeDims{2, 2, 2};
    cfg.n_layers = 2;
    cfg.n_heads = 4;
    cfg.mode = mode;
    cfg.weight_seed = 77;
    cfg.noise = SeededNoiseSpec{11, NoiseDistribution::standard_normal, NoiseCorrelation::iid};
    cfg.policy.rho_attn_max = 0.95;
    cfg.policy.rho_token_max = 0.95;
    for (int64_t s = 0; s < n_steps; ++s) {
        cfg.schedule.steps.push_back(s);
        cfg.schedule.rho_attn_base.push_back(rho_attn);
        cfg.schedule.rho_token_base.push_back(rho_token);
    }
    return cfg;
}

std::vector<std::string> checksums(const TraceRecord& trace) {
    std::vector<std::string> out;
    for (const auto& st : trace.steps) out.push_back(st.checksum);
    return out;
}

} // namespace

TEST_CASE("zero-sparsity dynamic mode is bit-identical to dense mode") {
    const PipelineResult dense = run_pipeline(small_config(PipelineMode::dense, 0.0, 0.0, 4));
    const PipelineResult dynamic = run_pipeline(small_config(PipelineMode::dynamic_sparse, 0.0, 0.0, 4));
    REQUIRE(dense.final_grid.data == dynamic.final_grid.data);
    REQUIRE(checksums(dense.trace) == checksums(dynamic.trace));
}

TEST_CASE("repeated runs produce identical trace checksums") {
    const auto cfg = small_config(PipelineMode::dynamic_sparse, 0.6, 0.3, 3);
    const PipelineResult a = run_pipeline(cfg);
    const PipelineResult b = run_pipeline(cfg);
    REQUIRE(checksums(a.trace) == checksums(b.trace));
    REQUIRE(a.final_grid.data == b.final_grid.data);
}

TEST_CASE("thread count does not change pipeline numerics") {
    auto cfg = small_config(PipelineMode::dynamic_sparse, 0.5, 0.25, 3);
    cfg.threads = 1;
    const PipelineResult one = run_pipeline(cfg);
    cfg.threads = 4;
    const PipelineResult four = run_pipeline(cfg);
    REQUIRE(one.final_grid.data == four.final_grid.data);
    REQUIRE(checksums(one.trace) == checksums(four.trace));
    for (size_t t = 0; t < one.trace.steps.size(); ++t)
        for (size_t l = 0; l < one.trace.steps[t].layers.size(); ++l)
            REQUIRE(one.trace.steps[t].layers[l].entropy == four.trace.steps[t].layers[l].entropy);
}

TEST_CASE("static mode hits the spec example budgets") {
    // grid (4,8,8,32), cubes (2,2,2), 4 layers, 8 dense steps reduced to 2
    PipelineConfig cfg;
    cfg.grid = GridDims{4, 8, 8, 32};
    cfg.cube = CubeDims{2, 2, 2};
    cfg.n_layers = 4;
    cfg.n_heads = 4;
    cfg.mode = PipelineMode::static_sparse;
    cfg.weight_seed = 5;
    cfg.noise = SeededNoiseSpec{9, NoiseDistribution::standard_normal, NoiseCorrelation::iid};
    cfg.baseline_steps = 8;
    cfg.schedule.steps = {0, 1};
    cfg.schedule.rho_attn_base = {0.75, 0.75};
    cfg.schedule.rho_token_base = {0.25, 0.25};
    cfg.policy.rho_attn_max = 0.95;
    cfg.policy.rho_token_max = 0.95;

    const PipelineResult res = run_pipeline(cfg);
    const int64_t n = cfg.grid.tokens();
    const int64_t expected_len = n - static_cast<int64_t>(std::floor(0.25 * static_cast<double>(n)));
    for (const auto& st : res.trace.steps) {
        double mean_attn = 0.0;
        for (const auto& lt : st.layers) {
            mean_attn += lt.rho_attn;
            REQUIRE(lt.merged_len == expected_len);
        }
        REQUIRE_THAT(mean_attn / 4.0, Catch::Matchers::WithinAbs(0.75, 1e-6));
    }
}

TEST_CASE("dynamic mode preserves the per-step budget on feasible steps") {
    auto cfg = small_config(PipelineMode::dynamic_sparse, 0.6, 0.4, 4);
    cfg.n_layers = 3;
    const PipelineResult res = run_pipeline(cfg);
    for (const auto& st : res.trace.steps) {
        double mean_attn = 0.0, mean_token = 0.0;
        for (const auto& lt : st.layers) {
            mean_attn += lt.rho_attn;
            mean_token += lt.rho_token;
            // merged length is exactly N - min(floor(rho_token * N), N - n_cubes)
            const int64_t n = cfg.grid.tokens();
            const int64_t n_cubes = build_layout(cfg.grid, cfg.cube).n_cubes;
            REQUIRE(lt.merged_len ==
                    n - std::min<int64_t>(static_cast<int64_t>(std::floor(lt.rho_token * static_cast<double>(n))),
                                          n - n_cubes));
        }
        REQUIRE_THAT(mean_attn / 3.0, Catch::Matchers::WithinAbs(0.6, 1e-6));
        REQUIRE_THAT(mean_token / 3.0, Catch::Matchers::WithinAbs(0.4, 1e-6));
    }
}

TEST_CASE("outputs always restore the full grid shape") {
    for (double rho : {0.0, 0.3, 0.8}) {
        const PipelineResult res = run_pipeline(small_config(PipelineMode::dynamic_sparse, rho, rho, 2));
        REQUIRE(res.final_grid.dims == GridDims{2, 4, 4, 16});
        REQUIRE(static_cast<int64_t>(res.final_grid.data.size()) == res.final_grid.dims.values());
    }
}

TEST_CASE("trace flops match the cost model on the same inputs") {
    const PipelineResult res = run_pipeline(small_config(PipelineMode::dynamic_sparse, 0.5, 0.25, 3));
    const int64_t d = 16;
    std::vector<std::vector<uint64_t>> pairs;
    std::vector<std::vector<int64_t>> lens;
    for (const auto& st : res.trace.steps) {
        pairs.emplace_back();
        lens.emplace_back();
        for (const auto& lt : st.layers) {
            REQUIRE(lt.flops.attention == 4.0 * static_cast<double>(d) * static_cast<double>(lt.allowed_pairs));
            REQUIRE(lt.flops.projection == projection_flops(lt.merged_len, d));
            REQUIRE(lt.flops.mlp == mlp_flops(lt.merged_len, d, 4.0));
            pairs.back().push_back(lt.allowed_pairs);
            lens.back().push_back(lt.merged_len);
        }
    }
    CostConfig ccfg;
    ccfg.n_layers = 2;
    ccfg.d_model = d;
    ccfg.n_heads = 4;
    ccfg.steps_dense = 3;
    ccfg.steps_sparse = 3;
    const CostReport again = pipeline_cost_exact(pairs, lens, 32, ccfg);
    REQUIRE(again.sparse_total.attention == res.trace.cost.sparse_total.attention);
    REQUIRE(again.sparse_total.projection == res.trace.cost.sparse_total.projection);
    REQUIRE(again.sparse_total.mlp == res.trace.cost.sparse_total.mlp);
}

TEST_CASE("reversed schedule flips ratios and keeps total flops") {
    // rho_token values chosen so merged lengths stay multiples of the chunk
    // size (uniform groups -> pair counts independent of which cubes win)
    PipelineConfig fwd;
    fwd.grid = GridDims{4, 8, 8, 16};
    fwd.cube = CubeDims{2, 2, 2};
    fwd.n_layers = 2;
    fwd.n_heads = 4;
    fwd.mode = PipelineMode::static_sparse;
    fwd.weight_seed = 3;
    fwd.noise = SeededNoiseSpec{21, NoiseDistribution::standard_normal, NoiseCorrelation::iid};
    fwd.schedule.steps = {0, 1, 2, 3};
    fwd.schedule.rho_attn_base = {0.9, 0.75, 0.5, 0.25};
    fwd.schedule.rho_token_base = {0.5, 0.25, 0.125, 0.0};
    fwd.policy.rho_attn_max = 0.95;
    fwd.policy.rho_token_max = 0.95;

    PipelineConfig rev = fwd;
    rev.mode = PipelineMode::reversed_schedule;

    const PipelineResult f = run_pipeline(fwd);
    const PipelineResult r = run_pipeline(rev);
    const size_t n_steps = f.trace.steps.size();
    for (size_t t = 0; t < n_steps; ++t)
        for (size_t l = 0; l < 2; ++l) {
            REQUIRE(f.trace.steps[t].layers[l].rho_attn ==
                    r.trace.steps[n_steps - 1 - t].layers[l].rho_attn);
            REQUIRE(f.trace.steps[t].layers[l].rho_token ==
                    r.trace.steps[n_steps - 1 - t].layers[l].rho_token);
        }
    REQUIRE(f.trace.cost.sparse_total.attention == r.trace.cost.sparse_total.attention);
    REQUIRE(f.trace.cost.sparse_total.projection == r.trace.cost.sparse_total.projection);
    REQUIRE(f.trace.cost.sparse_total.mlp == r.trace.cost.sparse_total.mlp);
    REQUIRE(f.trace.cost.sparse_total.total() == r.trace.cost.sparse_total.total());
}

TEST_CASE("entropy ablation bands behave like order statistics") {
    const auto cfg = small_config(PipelineMode::static_sparse, 0.5, 0.25, 2);

    const auto single = entropy_ablation(cfg, 1);
    for (const auto& row : single) {
        REQUIRE(row.n_samples == 1);
        REQUIRE(row.mean == row.min);
        REQUIRE(row.mean == row.max);
    }

    const auto two = entropy_ablation(cfg, 2);
    for (const auto& row : two) {
        REQUIRE(row.n_samples == 2);
        REQUIRE(row.min <= row.mean);
        REQUIRE(row.mean <= row.max);
    }

    const auto same = entropy_ablation(cfg, std::vector<uint64_t>{7, 7});
    for (const auto& row : same) {
        REQUIRE(row.min == row.max);  // identical seeds, zero-width band
    }
}

TEST_CASE("attention dumps reproduce the traced entropy") {
    const fs::path dir = fs::temp_directory_path() / "sparsegrid_dump_test";
    fs::create_directories(dir);
    auto cfg = small_config(PipelineMode::static_sparse, 0.5, 0.25, 2);
    RunOptions opts;
    opts.attn_dump_dir = dir;
    const PipelineResult res = run_pipeline(cfg, opts);
    for (size_t t = 0; t < res.trace.steps.size(); ++t)
        for (size_t l = 0; l < res.trace.steps[t].layers.size(); ++l) {
            const fs::path path = dir / ("attn_step" + std::to_string(res.trace.steps[t].step_id) + "_layer" +
                                         std::to_string(l) + "_sample0.tensor");
            const AttentionDumpStats stats = entropy_of_dump(path);
            REQUIRE(stats.entropy == res.trace.steps[t].layers[l].entropy);
        }
}

TEST_CASE("trace serializes with config echo and cost annotation") {
    const PipelineResult res = run_pipeline(small_config(PipelineMode::dynamic_sparse, 0.5, 0.25, 2));
    const nlohmann::json j = to_json(res.trace);
    REQUIRE(j["version"] == 1);
    REQUIRE(j["config"]["mode"] == "dynamic-sparse");
    REQUIRE(j["steps"].size() == 2);
    REQUIRE(j["cost"]["reference"]["measured_dit_wallclock_speedup"] == 83.3);
    // config echo parses back through the strict reader
    const PipelineConfig echo = pipeline_config_from_json(j["config"]);
    REQUIRE(echo.grid == GridDims{2, 4, 4, 16});
    // csv has one row per (step, layer) plus header
    const std::string csv = trace_csv(res.trace);
    REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 1 + 2 * 2);
}
