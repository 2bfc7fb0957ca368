// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sparsegrid/bench.hpp"
#include "sparsegrid/cost_model.hpp"
#include "sparsegrid/entropy_policy.hpp"
#include "sparsegrid/errors.hpp"
#include "sparsegrid/pipeline.hpp"
#include "sparsegrid/token_grid.hpp"

namespace sparsegrid {

// All config documents carry {"version": 1} and reject unknown fields, so
// golden files cannot silently drift.
inline constexpr int kSchemaVersion = 1;

namespace detail {

inline void check_fields(const nlohmann::json& j, const std::string& ctx,
                         const std::vector<std::string>& required, const std::vector<std::string>& optional = {}) {
    if (!j.is_object()) throw ValidationError(ctx + ": expected a JSON object");
    for (const auto& [key, _] : j.items()) {
        bool known = false;
        for (const auto& f : required) known = known || key == f;
        for (const auto& f : optional) known = known || key == f;
        if (!known) throw ValidationError(ctx + ": unknown field '" + key + "'");
    }
    for (const auto& f : required)
        if (!j.contains(f)) throw ValidationError(ctx + ": missing field '" + f + "'");
}

inline void check_version(const nlohmann::json& j, const std::string& ctx) {
    if (!j.contains("version")) throw ValidationError(ctx + ": missing field 'version'");
    if (!j["version"].is_number_integer() || j["version"].get<int>() != kSchemaVersion)
        throw ValidationError(ctx + ": unsupported version (expected " + std::to_string(kSchemaVersion) + ")");
}

template <typename T>
std::vector<std::vector<T>> matrix_from_json(const nlohmann::json& j, const std::string& ctx) {
    if (!j.is_array() || j.empty()) throw ValidationError(ctx + ": expected a non-empty array of arrays");
    std::vector<std::vector<T>> out;
    out.reserve(j.size());
    for (const auto& row : j) {
        if (!row.is_array()) throw ValidationError(ctx + ": expected a non-empty array of arrays");
        out.push_back(row.get<std::vector<T>>());
    }
    return out;
}

} // namespace detail

// --- noise spec ------------------------------------------------------------

inline nlohmann::json to_json(const SeededNoiseSpec& spec) {
    nlohmann::json j;
    j["seed"] = spec.seed;
    j["distribution"] = spec.distribution == NoiseDistribution::standard_normal ? "standard-normal" : "uniform-unit";
    j["correlation"] = spec.correlation == NoiseCorrelation::iid ? "iid" : "block-smoothed";
    if (spec.correlation == NoiseCorrelation::block_smoothed)
        j["window"] = {spec.window[0], spec.window[1], spec.window[2]};
    return j;
}

inline SeededNoiseSpec noise_spec_from_json(const nlohmann::json& j) {
    detail::check_fields(j, "noise", {"seed", "distribution", "correlation"}, {"window"});
    SeededNoiseSpec spec;
    spec.seed = j["seed"].get<uint64_t>();
    const std::string dist = j["distribution"].get<std::string>();
    if (dist == "standard-normal")
        spec.distribution = NoiseDistribution::standard_normal;
    else if (dist == "uniform-unit")
        spec.distribution = NoiseDistribution::uniform_unit;
    else
        throw ValidationError("noise: unknown distribution '" + dist + "'");
    const std::string corr = j["correlation"].get<std::string>();
    if (corr == "iid")
        spec.correlation = NoiseCorrelation::iid;
    else if (corr == "block-smoothed")
        spec.correlation = NoiseCorrelation::block_smoothed;
    else
        throw ValidationError("noise: unknown correlation '" + corr + "'");
    if (spec.correlation == NoiseCorrelation::block_smoothed) {
        if (!j.contains("window")) throw ValidationError("noise: block-smoothed requires 'window'");
        const auto w = j["window"].get<std::vector<int64_t>>();
        if (w.size() != 3) throw ValidationError("noise: window must have 3 entries");
        spec.window = {w[0], w[1], w[2]};
    }
    return spec;
}

// --- schedule / policy / profile -------------------------------------------

inline nlohmann::json to_json(const BaseSchedule& s) {
    return nlohmann::json{{"steps", s.steps}, {"rho_attn_base", s.rho_attn_base}, {"rho_token_base", s.rho_token_base}};
}

inline BaseSchedule schedule_from_json(const nlohmann::json& j, const std::string& ctx = "schedule") {
    detail::check_fields(j, ctx, {"steps", "rho_attn_base", "rho_token_base"});
    BaseSchedule s;
    s.steps = j["steps"].get<std::vector<int64_t>>();
    s.rho_attn_base = j["rho_attn_base"].get<std::vector<double>>();
    s.rho_token_base = j["rho_token_base"].get<std::vector<double>>();
    s.validate();
    return s;
}

inline nlohmann::json to_json(const PolicyParams& p) {
    return nlohmann::json{{"gamma", p.gamma},
                          {"rho_attn_min", p.rho_attn_min},
                          {"rho_attn_max", p.rho_attn_max},
                          {"rho_token_min", p.rho_token_min},
                          {"rho_token_max", p.rho_token_max},
                          {"renorm_max_iters", p.renorm_max_iters},
                          {"renorm_tolerance", p.renorm_tolerance}};
}

inline PolicyParams policy_params_from_json(const nlohmann::json& j, const std::string& ctx = "params") {
    detail::check_fields(j, ctx, {"gamma", "rho_attn_min", "rho_attn_max", "rho_token_min", "rho_token_max"},
                         {"renorm_max_iters", "renorm_tolerance"});
    PolicyParams p;
    p.gamma = j["gamma"].get<double>();
    p.rho_attn_min = j["rho_attn_min"].get<double>();
    p.rho_attn_max = j["rho_attn_max"].get<double>();
    p.rho_token_min = j["rho_token_min"].get<double>();
    p.rho_token_max = j["rho_token_max"].get<double>();
    if (j.contains("renorm_max_iters")) p.renorm_max_iters = j["renorm_max_iters"].get<int64_t>();
    if (j.contains("renorm_tolerance")) p.renorm_tolerance = j["renorm_tolerance"].get<double>();
    p.validate();
    return p;
}

struct EntropyProfileDoc {
    EntropyProfile profile;
    GridBudget budget;
};

inline nlohmann::json to_json(const EntropyProfileDoc& doc) {
    return nlohmann::json{{"version", kSchemaVersion},
                          {"n_tokens", doc.budget.n_tokens},
                          {"n_cubes", doc.budget.n_cubes},
                          {"entropy", doc.profile.h}};
}

inline EntropyProfileDoc profile_from_json(const nlohmann::json& j) {
    detail::check_version(j, "profile");
    detail::check_fields(j, "profile", {"version", "n_tokens", "n_cubes", "entropy"});
    EntropyProfileDoc doc;
    doc.budget.n_tokens = j["n_tokens"].get<int64_t>();
    doc.budget.n_cubes = j["n_cubes"].get<int64_t>();
    doc.budget.validate();
    doc.profile.h = detail::matrix_from_json<double>(j["entropy"], "profile.entropy");
    doc.profile.n_tokens_used = doc.budget.n_tokens;
    doc.profile.validate();
    return doc;
}

inline nlohmann::json to_json(const SparsityAllocation& a) {
    const auto bools = [](const std::vector<std::vector<uint8_t>>& m) {
        nlohmann::json out = nlohmann::json::array();
        for (const auto& row : m) {
            nlohmann::json r = nlohmann::json::array();
            for (uint8_t v : row) r.push_back(v != 0);
            out.push_back(std::move(r));
        }
        return out;
    };
    const auto bools1 = [](const std::vector<uint8_t>& v) {
        nlohmann::json out = nlohmann::json::array();
        for (uint8_t x : v) out.push_back(x != 0);
        return out;
    };
    nlohmann::json j;
    j["version"] = kSchemaVersion;
    j["n_tokens"] = a.n_tokens;
    j["n_cubes"] = a.n_cubes;
    j["rho_attn"] = a.attn.rho;
    j["rho_token"] = a.token.rho;
    j["k_token"] = a.k_token;
    j["k_cubes"] = a.k_cubes;
    j["clipped_attn"] = bools(a.attn.clipped);
    j["clipped_token"] = bools(a.token.clipped);
    j["feasible_attn"] = bools1(a.attn.feasible);
    j["feasible_token"] = bools1(a.token.feasible);
    return j;
}

// --- pipeline config ---------------------------------------------------

inline nlohmann::json to_json(const PipelineConfig& cfg) {
    nlohmann::json j;
    j["version"] = kSchemaVersion;
    j["grid"] = {{"t", cfg.grid.t}, {"h", cfg.grid.h}, {"w", cfg.grid.w}, {"d", cfg.grid.d}};
    j["cube"] = {{"t", cfg.cube.t}, {"h", cfg.cube.h}, {"w", cfg.cube.w}};
    j["n_layers"] = cfg.n_layers;
    j["n_heads"] = cfg.n_heads;
    j["mode"] = to_string(cfg.mode);
    j["weight_seed"] = cfg.weight_seed;
    j["noise"] = to_json(cfg.noise);
    j["schedule"] = to_json(cfg.schedule);
    j["policy"] = to_json(cfg.policy);
    j["threads"] = cfg.threads;
    j["global_merge"] = cfg.global_merge;
    j["trace_merge_plans"] = cfg.trace_merge_plans;
    j["baseline_steps"] = cfg.baseline_steps;
    j["mlp_expansion"] = cfg.mlp_expansion;
    return j;
}

inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
    detail::check_version(j, "config");
    detail::check_fields(j, "config",
                         {"version", "grid", "cube", "n_layers", "n_heads", "mode", "weight_seed", "noise",
                          "schedule", "policy"},
                         {"threads", "global_merge", "trace_merge_plans", "baseline_steps", "mlp_expansion"});
    PipelineConfig cfg;
    detail::check_fields(j["grid"], "config.grid", {"t", "h", "w", "d"});
    cfg.grid = GridDims{j["grid"]["t"].get<int64_t>(), j["grid"]["h"].get<int64_t>(), j["grid"]["w"].get<int64_t>(),
                        j["grid"]["d"].get<int64_t>()};
    detail::check_fields(j["cube"], "config.cube", {"t", "h", "w"});
    cfg.cube = CubeDims{j["cube"]["t"].get<int64_t>(), j["cube"]["h"].get<int64_t>(), j["cube"]["w"].get<int64_t>()};
    cfg.n_layers = j["n_layers"].get<int64_t>();
    cfg.n_heads = j["n_heads"].get<int64_t>();
    cfg.mode = pipeline_mode_from_string(j["mode"].get<std::string>());
    cfg.weight_seed = j["weight_seed"].get<uint64_t>();
    cfg.noise = noise_spec_from_json(j["noise"]);
    cfg.schedule = schedule_from_json(j["schedule"], "config.schedule");
    cfg.policy = policy_params_from_json(j["policy"], "config.policy");
    if (j.contains("threads")) cfg.threads = j["threads"].get<int>();
    if (j.contains("global_merge")) cfg.global_merge = j["global_merge"].get<bool>();
    if (j.contains("trace_merge_plans")) cfg.trace_merge_plans = j["trace_merge_plans"].get<bool>();
    if (j.contains("baseline_steps")) cfg.baseline_steps = j["baseline_steps"].get<int64_t>();
    if (j.contains("mlp_expansion")) cfg.mlp_expansion = j["mlp_expansion"].get<double>();
    cfg.validate();
    return cfg;
}

// --- bench spec --------------------------------------------------------

inline nlohmann::json to_json(const BenchSpec& s) {
    nlohmann::json j;
    j["version"] = kSchemaVersion;
    j["token_counts"] = s.token_counts;
    j["sparsity_levels"] = s.sparsity_levels;
    j["repeats"] = s.repeats;
    j["warmup"] = s.warmup;
    j["frames"] = s.frames;
    j["cube"] = {s.cube.t, s.cube.h, s.cube.w};
    j["d_model"] = s.d_model;
    j["n_heads"] = s.n_heads;
    j["threads"] = s.threads;
    j["seed"] = s.seed;
    return j;
}

inline BenchSpec bench_spec_from_json(const nlohmann::json& j) {
    detail::check_version(j, "bench spec");
    detail::check_fields(j, "bench spec", {"version", "token_counts", "sparsity_levels", "repeats"},
                         {"warmup", "frames", "cube", "d_model", "n_heads", "threads", "seed"});
    BenchSpec s;
    s.token_counts = j["token_counts"].get<std::vector<int64_t>>();
    s.sparsity_levels = j["sparsity_levels"].get<std::vector<double>>();
    s.repeats = j["repeats"].get<int64_t>();
    if (j.contains("warmup")) s.warmup = j["warmup"].get<int64_t>();
    if (j.contains("frames")) s.frames = j["frames"].get<int64_t>();
    if (j.contains("cube")) {
        const auto c = j["cube"].get<std::vector<int64_t>>();
        if (c.size() != 3) throw ValidationError("bench spec: cube must have 3 entries");
        s.cube = CubeDims{c[0], c[1], c[2]};
    }
    if (j.contains("d_model")) s.d_model = j["d_model"].get<int64_t>();
    if (j.contains("n_heads")) s.n_heads = j["n_heads"].get<int64_t>();
    if (j.contains("threads")) s.threads = j["threads"].get<int>();
    if (j.contains("seed")) s.seed = j["seed"].get<uint64_t>();
    s.validate();
    return s;
}

// --- cost report / trace -------------------------------------------------

inline nlohmann::json to_json(const FlopBreakdown& f) {
    return nlohmann::json{
        {"attention", f.attention}, {"projection", f.projection}, {"mlp", f.mlp}, {"total", f.total()}};
}

inline nlohmann::json to_json(const CostReport& r) {
    nlohmann::json j;
    j["dense"] = to_json(r.dense_total);
    j["sparse"] = to_json(r.sparse_total);
    j["speedup_attention"] = r.speedup_attention;
    j["speedup_total"] = r.speedup_total;
    j["speedup_total_with_overhead"] = r.speedup_total_with_overhead;
    j["reference"] = {{"measured_dit_wallclock_speedup", r.reference_dit_wallclock_speedup},
                      {"model_upper_bounds_reference", r.model_upper_bounds_reference}};
    return j;
}

inline nlohmann::json to_json(const TraceRecord& trace) {
    nlohmann::json j;
    j["version"] = kSchemaVersion;
    j["config"] = to_json(trace.config);
    nlohmann::json steps = nlohmann::json::array();
    for (const StepTrace& st : trace.steps) {
        nlohmann::json layers = nlohmann::json::array();
        for (size_t l = 0; l < st.layers.size(); ++l) {
            const LayerTrace& lt = st.layers[l];
            nlohmann::json lj{{"layer", l},
                              {"entropy", lt.entropy},
                              {"rho_attn", lt.rho_attn},
                              {"rho_token", lt.rho_token},
                              {"k_cubes", lt.k_cubes},
                              {"n_cubes", lt.n_cubes},
                              {"merged_len", lt.merged_len},
                              {"allowed_pairs", lt.allowed_pairs},
                              {"mask_density", lt.mask_density},
                              {"flops_attention", lt.flops.attention},
                              {"flops_projection", lt.flops.projection},
                              {"flops_mlp", lt.flops.mlp},
                              {"flops_total", lt.flops.total()},
                              {"wall_ms", lt.wall_ms}};
            if (lt.merge_audit) {
                lj["merge_plan"] = {{"merged", lt.merge_audit->merged},
                                    {"assigned_dest", lt.merge_audit->assigned},
                                    {"unmerged", lt.merge_audit->unmerged},
                                    {"destinations", lt.merge_audit->destinations}};
            }
            layers.push_back(std::move(lj));
        }
        steps.push_back(nlohmann::json{{"step", st.step_id}, {"checksum", st.checksum}, {"layers", std::move(layers)}});
    }
    j["steps"] = std::move(steps);
    j["cost"] = to_json(trace.cost);
    return j;
}

inline std::string trace_csv(const TraceRecord& trace) {
    std::ostringstream out;
    out << "step,layer,entropy,rho_attn,rho_token,k_cubes,n_cubes,merged_len,mask_density,"
           "flops_attention,flops_projection,flops_mlp,flops_total,wall_ms\n";
    out.precision(17);
    for (const StepTrace& st : trace.steps)
        for (size_t l = 0; l < st.layers.size(); ++l) {
            const LayerTrace& lt = st.layers[l];
            out << st.step_id << ',' << l << ',' << lt.entropy << ',' << lt.rho_attn << ',' << lt.rho_token << ','
                << lt.k_cubes << ',' << lt.n_cubes << ',' << lt.merged_len << ',' << lt.mask_density << ','
                << lt.flops.attention << ',' << lt.flops.projection << ',' << lt.flops.mlp << ','
                << lt.flops.total() << ',' << lt.wall_ms << '\n';
        }
    return out.str();
}

inline std::string entropy_rows_csv(const std::vector<EntropyAggregateRow>& rows) {
    std::ostringstream out;
    out << "step,layer,n_samples,n_tokens,h_mean,h_min,h_max\n";
    out.precision(17);
    for (const auto& r : rows)
        out << r.step << ',' << r.layer << ',' << r.n_samples << ',' << r.n_tokens << ',' << r.mean << ',' << r.min
            << ',' << r.max << '\n';
    return out.str();
}

} // namespace sparsegrid
