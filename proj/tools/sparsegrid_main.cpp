// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: fixture generation, entropy-aware allocation,
// pipeline runs with trace output, attention-entropy profiling, and the
// sequence-length/sparsity benchmark sweep.
//
// Exit codes: 0 success, 2 usage error, 3 validation/data error,
// 4 internal invariant violation.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sparsegrid/bench.hpp"
#include "sparsegrid/pipeline.hpp"
#include "sparsegrid/serialization.hpp"
#include "sparsegrid/tensor_io.hpp"

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitInternal = 4;

nlohmann::json load_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw sparsegrid::ValidationError("cannot open " + path.string());
    try {
        nlohmann::json j;
        in >> j;
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw sparsegrid::ValidationError("invalid JSON in " + path.string() + ": " + e.what());
    }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw sparsegrid::Error("cannot open " + path.string() + " for writing");
    out << text;
}

std::vector<int64_t> parse_int_list(const std::string& s, size_t expected, const std::string& what) {
    std::vector<int64_t> out;
    std::string item;
    std::istringstream ss(s);
    while (std::getline(ss, item, ',')) {
        size_t pos = 0;
        int64_t v = 0;
        try {
            v = std::stoll(item, &pos);
        } catch (const std::exception&) {
            throw CLI::ValidationError(what, "expected a comma-separated integer list, got '" + s + "'");
        }
        if (pos != item.size())
            throw CLI::ValidationError(what, "expected a comma-separated integer list, got '" + s + "'");
        out.push_back(v);
    }
    if (out.size() != expected)
        throw CLI::ValidationError(what, "expected " + std::to_string(expected) + " comma-separated integers");
    return out;
}

int run_gen_fixture(uint64_t seed, const std::string& dims_str, const std::string& mode, const std::string& dist,
                    const std::string& window_str, const std::string& out_path) {
    const auto dims = parse_int_list(dims_str, 4, "--dims");
    sparsegrid::SeededNoiseSpec spec;
    spec.seed = seed;
    if (dist == "normal" || dist == "standard-normal")
        spec.distribution = sparsegrid::NoiseDistribution::standard_normal;
    else if (dist == "uniform" || dist == "uniform-unit")
        spec.distribution = sparsegrid::NoiseDistribution::uniform_unit;
    else
        throw CLI::ValidationError("--dist", "expected normal|uniform");
    if (mode == "iid")
        spec.correlation = sparsegrid::NoiseCorrelation::iid;
    else if (mode == "smoothed" || mode == "block-smoothed")
        spec.correlation = sparsegrid::NoiseCorrelation::block_smoothed;
    else
        throw CLI::ValidationError("--mode", "expected iid|smoothed");
    if (spec.correlation == sparsegrid::NoiseCorrelation::block_smoothed) {
        const auto w = parse_int_list(window_str, 3, "--window");
        spec.window = {w[0], w[1], w[2]};
    }
    const sparsegrid::GridDims gd{dims[0], dims[1], dims[2], dims[3]};
    const sparsegrid::TokenGrid grid = sparsegrid::generate_grid(spec, gd);
    sparsegrid::write_tensor(grid, out_path);
    std::cout << "wrote " << out_path << " (" << gd.values() << " values)\n";
    return 0;
}

int run_allocate(const std::string& profile_path, const std::string& schedule_path, const std::string& params_path,
                 const std::string& out_path) {
    const auto profile_doc = sparsegrid::profile_from_json(load_json(profile_path));
    nlohmann::json sj = load_json(schedule_path);
    sparsegrid::detail::check_version(sj, "schedule");
    sj.erase("version");
    const auto schedule = sparsegrid::schedule_from_json(sj);
    nlohmann::json pj = load_json(params_path);
    sparsegrid::detail::check_version(pj, "params");
    pj.erase("version");
    const auto params = sparsegrid::policy_params_from_json(pj);

    if (profile_doc.profile.n_steps() != schedule.n_steps())
        throw sparsegrid::ValidationError("profile has " + std::to_string(profile_doc.profile.n_steps()) +
                                          " steps but schedule has " + std::to_string(schedule.n_steps()));
    const auto alloc = sparsegrid::allocate(profile_doc.profile, schedule, params, profile_doc.budget);
    write_text(out_path, sparsegrid::to_json(alloc).dump(2) + "\n");
    std::cout << "wrote " << out_path << "\n";
    return 0;
}

int run_run(const std::string& config_path, const std::string& trace_path, const std::string& csv_path,
            const std::string& grid_path, const std::string& dump_dir, int threads_override) {
    sparsegrid::PipelineConfig cfg = sparsegrid::pipeline_config_from_json(load_json(config_path));
    if (threads_override > 0) cfg.threads = threads_override;
    sparsegrid::RunOptions opts;
    if (!dump_dir.empty()) {
        std::filesystem::create_directories(dump_dir);
        opts.attn_dump_dir = dump_dir;
    }
    const sparsegrid::PipelineResult res = sparsegrid::run_pipeline(cfg, opts);
    if (!trace_path.empty()) write_text(trace_path, sparsegrid::to_json(res.trace).dump(2) + "\n");
    if (!csv_path.empty()) write_text(csv_path, sparsegrid::trace_csv(res.trace));
    if (!grid_path.empty()) sparsegrid::write_tensor(res.final_grid, grid_path);
    std::cout << "ran " << res.trace.steps.size() << " steps x " << cfg.n_layers
              << " layers; modeled speedup_total = " << res.trace.cost.speedup_total << "\n";
    return 0;
}

int run_bench_cmd(const std::string& spec_path, const std::string& out_path) {
    const sparsegrid::BenchSpec spec = sparsegrid::bench_spec_from_json(load_json(spec_path));
    const auto rows = sparsegrid::run_bench(spec);
    write_text(out_path, sparsegrid::bench_csv(rows, spec));
    std::cout << "wrote " << out_path << " (" << rows.size() << " rows)\n";
    return 0;
}

int run_entropy(const std::string& dumps_dir, const std::string& config_path, int64_t samples,
                const std::string& seeds_str, const std::string& out_path) {
    std::vector<sparsegrid::EntropyAggregateRow> rows;
    if (!dumps_dir.empty()) {
        const std::regex pattern(R"(attn_step(\d+)_layer(\d+)_sample(\d+)\.tensor)");
        std::vector<sparsegrid::DumpEntry> entries;
        for (const auto& it : std::filesystem::directory_iterator(dumps_dir)) {
            std::smatch m;
            const std::string name = it.path().filename().string();
            if (std::regex_match(name, m, pattern))
                entries.push_back(sparsegrid::DumpEntry{std::stoll(m[1]), std::stoll(m[2]), std::stoll(m[3]),
                                                        it.path()});
        }
        if (entries.empty())
            throw sparsegrid::ValidationError("no attn_step<T>_layer<L>_sample<K>.tensor dumps found in " +
                                              dumps_dir);
        rows = sparsegrid::entropy_profile_from_dumps(entries);
    } else if (!config_path.empty()) {
        const sparsegrid::PipelineConfig cfg = sparsegrid::pipeline_config_from_json(load_json(config_path));
        if (!seeds_str.empty()) {
            std::vector<uint64_t> seeds;
            std::istringstream ss(seeds_str);
            std::string item;
            while (std::getline(ss, item, ',')) seeds.push_back(std::stoull(item));
            rows = sparsegrid::entropy_ablation(cfg, seeds);
        } else {
            rows = sparsegrid::entropy_ablation(cfg, samples);
        }
    } else {
        throw CLI::ValidationError("entropy", "one of --dumps or --config is required");
    }
    write_text(out_path, sparsegrid::entropy_rows_csv(rows));
    std::cout << "wrote " << out_path << " (" << rows.size() << " rows)\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"sparse attention / token merging kernel lab for spatio-temporal token grids"};
    app.require_subcommand(1);

    // gen-fixture
    auto* gen = app.add_subcommand("gen-fixture", "generate a deterministic synthetic token grid");
    uint64_t seed = 0;
    std::string dims_str, mode = "iid", dist = "normal", window_str = "1,2,2", out_path;
    gen->add_option("--seed", seed, "generator seed")->required();
    gen->add_option("--dims", dims_str, "grid dims T,H,W,d")->required();
    gen->add_option("--mode", mode, "iid|smoothed");
    gen->add_option("--dist", dist, "normal|uniform");
    gen->add_option("--window", window_str, "smoothing window per axis (smoothed mode)");
    gen->add_option("--out", out_path, "output payload path (sidecar at <out>.json)")->required();

    // allocate
    auto* alloc = app.add_subcommand("allocate", "entropy-aware sparsity allocation from JSON documents");
    std::string profile_path, schedule_path, params_path, alloc_out;
    alloc->add_option("--profile", profile_path, "entropy profile JSON")->required();
    alloc->add_option("--schedule", schedule_path, "base schedule JSON")->required();
    alloc->add_option("--params", params_path, "policy params JSON")->required();
    alloc->add_option("--out", alloc_out, "output allocation JSON")->required();

    // run
    auto* run = app.add_subcommand("run", "run the toy multi-layer multi-step pipeline");
    std::string config_path, trace_path, csv_path, grid_out, dump_dir;
    int threads_override = 0;
    run->add_option("--config", config_path, "pipeline config JSON")->required();
    run->add_option("--trace", trace_path, "output trace JSON");
    run->add_option("--csv", csv_path, "output per-(step,layer) CSV");
    run->add_option("--out-grid", grid_out, "output final grid tensor");
    run->add_option("--dump-attn", dump_dir, "directory for attention weight dumps");
    run->add_option("--threads", threads_override, "override config thread count");

    // bench
    auto* bench = app.add_subcommand("bench", "wall-time sweep over sequence length and sparsity");
    std::string bench_spec_path, bench_out;
    bench->add_option("--spec", bench_spec_path, "bench spec JSON")->required();
    bench->add_option("--out", bench_out, "output CSV")->required();

    // entropy
    auto* entropy = app.add_subcommand("entropy", "layer-wise entropy profile from dumps or pipeline runs");
    std::string dumps_dir, entropy_config, entropy_seeds, entropy_out;
    int64_t entropy_samples = 1;
    entropy->add_option("--dumps", dumps_dir, "directory of attention weight dumps");
    entropy->add_option("--config", entropy_config, "pipeline config JSON (ablation mode)");
    entropy->add_option("--samples", entropy_samples, "number of pipeline samples (ablation mode)");
    entropy->add_option("--seeds", entropy_seeds, "explicit comma-separated sample seeds");
    entropy->add_option("--out", entropy_out, "output CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (gen->parsed()) return run_gen_fixture(seed, dims_str, mode, dist, window_str, out_path);
        if (alloc->parsed()) return run_allocate(profile_path, schedule_path, params_path, alloc_out);
        if (run->parsed()) return run_run(config_path, trace_path, csv_path, grid_out, dump_dir, threads_override);
        if (bench->parsed()) return run_bench_cmd(bench_spec_path, bench_out);
        if (entropy->parsed())
            return run_entropy(dumps_dir, entropy_config, entropy_samples, entropy_seeds, entropy_out);
    } catch (const CLI::ValidationError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const sparsegrid::ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return kExitData;
    } catch (const sparsegrid::CorruptFileError& e) {
        std::cerr << "corrupt file: " << e.what() << "\n";
        return kExitData;
    } catch (const sparsegrid::UnsupportedFormatError& e) {
        std::cerr << "unsupported format: " << e.what() << "\n";
        return kExitData;
    } catch (const sparsegrid::DimensionError& e) {
        std::cerr << "dimension error: " << e.what() << "\n";
        return kExitData;
    } catch (const sparsegrid::LayoutError& e) {
        std::cerr << "layout error: " << e.what() << "\n";
        return kExitData;
    } catch (const sparsegrid::ParamError& e) {
        std::cerr << "parameter error: " << e.what() << "\n";
        return kExitData;
    } catch (const sparsegrid::Error& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kExitInternal;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kExitInternal;
    }
    return 0;
}
