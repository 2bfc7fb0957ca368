// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sparsegrid/attention.hpp"
#include "sparsegrid/errors.hpp"
#include "sparsegrid/tensor_io.hpp"

namespace sparsegrid {

inline constexpr double kEntropyEpsilon = 1e-12;

// Normalized attention entropies h[step][layer] in [0,1].
struct EntropyProfile {
    std::vector<std::vector<double>> h;
    int64_t n_tokens_used = 0;

    int64_t n_steps() const { return static_cast<int64_t>(h.size()); }
    int64_t n_layers() const { return h.empty() ? 0 : static_cast<int64_t>(h.front().size()); }

    void validate() const {
        for (const auto& row : h) {
            if (row.size() != h.front().size()) throw ValidationError("entropy profile rows must have equal length");
            for (double v : row)
                if (!(v >= -1e-9 && v <= 1.0 + 1e-9)) throw ValidationError("entropy values must lie in [0,1]");
        }
    }
};

// Hand-crafted per-step sparsity targets the allocator must preserve on
// average.
struct BaseSchedule {
    std::vector<int64_t> steps;
    std::vector<double> rho_attn_base;
    std::vector<double> rho_token_base;

    int64_t n_steps() const { return static_cast<int64_t>(steps.size()); }

    void validate() const {
        if (steps.empty()) throw ValidationError("schedule must have at least one step");
        if (rho_attn_base.size() != steps.size() || rho_token_base.size() != steps.size())
            throw ValidationError("schedule arrays must have one entry per step");
        for (size_t i = 1; i < steps.size(); ++i)
            if (steps[i] <= steps[i - 1]) throw ValidationError("step ids must be strictly increasing");
        for (double v : rho_attn_base)
            if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("rho_attn_base entries must lie in [0,1]");
        for (double v : rho_token_base)
            if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("rho_token_base entries must lie in [0,1]");
    }

    BaseSchedule reversed() const {
        BaseSchedule r = *this;
        std::reverse(r.rho_attn_base.begin(), r.rho_attn_base.end());
        std::reverse(r.rho_token_base.begin(), r.rho_token_base.end());
        return r;
    }
};

struct PolicyParams {
    double gamma = 1.0;
    double rho_attn_min = 0.0, rho_attn_max = 1.0;
    double rho_token_min = 0.0, rho_token_max = 1.0;
    int64_t renorm_max_iters = 0;  // 0 means 2 * n_layers
    double renorm_tolerance = 1e-6;

    void validate() const {
        if (gamma < 1.0) throw ParamError("gamma must be >= 1");
        if (!(rho_attn_min >= 0.0 && rho_attn_min <= rho_attn_max && rho_attn_max <= 1.0))
            throw ParamError("attention clip bounds must satisfy 0 <= min <= max <= 1");
        if (!(rho_token_min >= 0.0 && rho_token_min <= rho_token_max && rho_token_max <= 1.0))
            throw ParamError("token clip bounds must satisfy 0 <= min <= max <= 1");
        if (renorm_max_iters < 0) throw ParamError("renorm_max_iters must be >= 0");
        if (!(renorm_tolerance > 0.0)) throw ParamError("renorm_tolerance must be > 0");
    }
};

struct GridBudget {
    int64_t n_tokens = 0;
    int64_t n_cubes = 0;

    void validate() const {
        if (n_tokens < 1 || n_cubes < 1 || n_cubes > n_tokens)
            throw ValidationError("grid budget needs 1 <= n_cubes <= n_tokens");
    }
};

struct AllocationSlice {
    std::vector<std::vector<double>> rho;        // [steps][layers]
    std::vector<std::vector<uint8_t>> clipped;   // [steps][layers]
    std::vector<uint8_t> feasible;               // [steps]
};

struct SparsityAllocation {
    AllocationSlice attn, token;
    std::vector<std::vector<int64_t>> k_token;  // per-layer merge counts
    std::vector<std::vector<int64_t>> k_cubes;  // per-layer top-k cube counts
    int64_t n_tokens = 0;
    int64_t n_cubes = 0;
};

// Entropy of a key marginal, normalized by log(support size).
inline double entropy_from_marginal(const std::vector<double>& marginal) {
    const int64_t n = static_cast<int64_t>(marginal.size());
    if (n < 2) throw UndefinedEntropyError("entropy needs at least 2 keys (log N = 0 at N = 1)");
    double acc = 0.0;
    for (double a : marginal) acc += a * std::log(a + kEntropyEpsilon);
    const double h = -acc / std::log(static_cast<double>(n));
    return std::clamp(h, 0.0, 1.0);
}

// Key marginal of an attention map: average over heads and queries.
inline std::vector<double> key_marginal(const AttentionWeights& w) {
    const int64_t n = w.n_tokens;
    std::vector<double> marg(static_cast<size_t>(n), 0.0);
    for (int64_t h = 0; h < w.n_heads; ++h)
        for (int64_t i = 0; i < n; ++i) {
            const float* row = w.row(h, i);
            for (int64_t j = 0; j < n; ++j) marg[static_cast<size_t>(j)] += row[j];
        }
    const double inv = 1.0 / (static_cast<double>(w.n_heads) * static_cast<double>(n));
    for (double& v : marg) v *= inv;
    return marg;
}

inline double attention_entropy(const AttentionWeights& w) {
    if (w.n_tokens < 2) throw UndefinedEntropyError("entropy needs at least 2 keys (log N = 0 at N = 1)");
    return entropy_from_marginal(key_marginal(w));
}

// w = (1 - h)^gamma: low entropy -> high importance -> more sparsity.
inline std::vector<double> importance_weights(const std::vector<double>& h_row, double gamma) {
    if (gamma < 1.0) throw ParamError("gamma must be >= 1");
    std::vector<double> w(h_row.size());
    for (size_t l = 0; l < h_row.size(); ++l) {
        if (!(h_row[l] >= -1e-9 && h_row[l] <= 1.0 + 1e-9))
            throw ValidationError("entropy values must lie in [0,1]");
        const double h = std::clamp(h_row[l], 0.0, 1.0);
        w[l] = std::pow(1.0 - h, gamma);
    }
    return w;
}

namespace detail {

struct StepAllocation {
    std::vector<double> rho;
    std::vector<uint8_t> clipped;
    bool feasible = false;
};

// Scale the base ratio by normalized weights, clip, then spread any residual
// uniformly over layers not pinned at a bound until the per-step mean matches
// the base (or every layer is pinned).
inline StepAllocation allocate_step(double base, const std::vector<double>& weights, double lo, double hi,
                                    int64_t max_iters, double tol) {
    const int64_t n_layers = static_cast<int64_t>(weights.size());
    StepAllocation out;
    out.rho.resize(static_cast<size_t>(n_layers));
    out.clipped.assign(static_cast<size_t>(n_layers), 0);
    double mean_w = 0.0;
    for (double w : weights) mean_w += w;
    mean_w /= static_cast<double>(n_layers);

    for (int64_t l = 0; l < n_layers; ++l) {
        // all-equal weights (incl. all-zero) leave every layer at the base
        const double raw = mean_w > 1e-300 ? base * weights[static_cast<size_t>(l)] / mean_w : base;
        const double clipped = std::clamp(raw, lo, hi);
        out.rho[static_cast<size_t>(l)] = clipped;
        out.clipped[static_cast<size_t>(l)] = clipped != raw;
    }

    if (max_iters <= 0) max_iters = 2 * n_layers;
    for (int64_t iter = 0; iter <= max_iters; ++iter) {
        double mean = 0.0;
        for (double v : out.rho) mean += v;
        mean /= static_cast<double>(n_layers);
        const double resid = base - mean;
        if (std::abs(resid) <= tol) {
            out.feasible = true;
            return out;
        }
        if (iter == max_iters) break;
        std::vector<int64_t> free;
        for (int64_t l = 0; l < n_layers; ++l) {
            const double v = out.rho[static_cast<size_t>(l)];
            if ((resid > 0.0 && v < hi) || (resid < 0.0 && v > lo)) free.push_back(l);
        }
        if (free.empty()) break;  // every layer pinned at the relevant bound
        const double share = resid * static_cast<double>(n_layers) / static_cast<double>(free.size());
        for (int64_t l : free) {
            const double moved = out.rho[static_cast<size_t>(l)] + share;
            const double clipped = std::clamp(moved, lo, hi);
            if (clipped != moved) out.clipped[static_cast<size_t>(l)] = 1;
            out.rho[static_cast<size_t>(l)] = clipped;
        }
    }
    out.feasible = false;
    return out;
}

} // namespace detail

// Converts the base schedule into per-layer attention and token ratios via
// the entropy-aware weight/clip/redistribute procedure, and derives the
// integer budgets: K_token = floor(rho_token * N) capped at N - n_cubes, and
// k_cubes = round((1 - rho_attn) * n_cubes) clamped to [1, n_cubes].
inline SparsityAllocation allocate(const EntropyProfile& profile, const BaseSchedule& base,
                                   const PolicyParams& params, const GridBudget& budget) {
    base.validate();
    params.validate();
    profile.validate();
    budget.validate();
    if (profile.n_steps() != base.n_steps())
        throw ShapeError("allocate: profile has " + std::to_string(profile.n_steps()) + " steps, schedule has " +
                         std::to_string(base.n_steps()));
    if (profile.n_layers() < 1) throw ShapeError("allocate: profile must have at least one layer");

    const int64_t n_steps = base.n_steps();
    const int64_t n_layers = profile.n_layers();
    SparsityAllocation alloc;
    alloc.n_tokens = budget.n_tokens;
    alloc.n_cubes = budget.n_cubes;
    const auto reserve = [&](auto& m) { m.resize(static_cast<size_t>(n_steps)); };
    reserve(alloc.attn.rho);
    reserve(alloc.attn.clipped);
    reserve(alloc.token.rho);
    reserve(alloc.token.clipped);
    reserve(alloc.k_token);
    reserve(alloc.k_cubes);
    alloc.attn.feasible.resize(static_cast<size_t>(n_steps));
    alloc.token.feasible.resize(static_cast<size_t>(n_steps));

    for (int64_t t = 0; t < n_steps; ++t) {
        const auto w = importance_weights(profile.h[static_cast<size_t>(t)], params.gamma);
        auto attn = detail::allocate_step(base.rho_attn_base[static_cast<size_t>(t)], w, params.rho_attn_min,
                                          params.rho_attn_max, params.renorm_max_iters, params.renorm_tolerance);
        auto token = detail::allocate_step(base.rho_token_base[static_cast<size_t>(t)], w, params.rho_token_min,
                                           params.rho_token_max, params.renorm_max_iters, params.renorm_tolerance);
        auto& kt = alloc.k_token[static_cast<size_t>(t)];
        auto& kc = alloc.k_cubes[static_cast<size_t>(t)];
        kt.resize(static_cast<size_t>(n_layers));
        kc.resize(static_cast<size_t>(n_layers));
        for (int64_t l = 0; l < n_layers; ++l) {
            const double rho_tok = token.rho[static_cast<size_t>(l)];
            const double rho_att = attn.rho[static_cast<size_t>(l)];
            kt[static_cast<size_t>(l)] =
                std::min<int64_t>(static_cast<int64_t>(std::floor(rho_tok * static_cast<double>(budget.n_tokens))),
                                  budget.n_tokens - budget.n_cubes);
            kc[static_cast<size_t>(l)] = std::clamp<int64_t>(
                std::llround((1.0 - rho_att) * static_cast<double>(budget.n_cubes)), 1, budget.n_cubes);
        }
        alloc.attn.rho[static_cast<size_t>(t)] = std::move(attn.rho);
        alloc.attn.clipped[static_cast<size_t>(t)] = std::move(attn.clipped);
        alloc.attn.feasible[static_cast<size_t>(t)] = attn.feasible;
        alloc.token.rho[static_cast<size_t>(t)] = std::move(token.rho);
        alloc.token.clipped[static_cast<size_t>(t)] = std::move(token.clipped);
        alloc.token.feasible[static_cast<size_t>(t)] = token.feasible;
    }
    return alloc;
}

// --- entropy profiling from attention dumps -------------------------------

struct AttentionDumpStats {
    int64_t n_heads = 0;
    int64_t n_tokens = 0;
    double entropy = 0.0;
};

// Reads a TensorFile with dims (H, N, N, 1), validates row-stochasticity
// within 1e-3, and returns the normalized entropy of its key marginal.
inline AttentionDumpStats entropy_of_dump(const std::filesystem::path& payload) {
    const TokenGrid g = read_tensor(payload);
    if (g.dims.d != 1 || g.dims.h != g.dims.w)
        throw ValidationError("attention dump dims must be (H, N, N, 1): " + payload.string());
    const int64_t heads = g.dims.t;
    const int64_t n = g.dims.h;
    if (n < 2) throw UndefinedEntropyError("attention dump needs N >= 2: " + payload.string());

    std::vector<double> marg(static_cast<size_t>(n), 0.0);
    for (int64_t h = 0; h < heads; ++h)
        for (int64_t i = 0; i < n; ++i) {
            const float* row = g.data.data() + static_cast<size_t>((h * n + i) * n);
            double sum = 0.0;
            for (int64_t j = 0; j < n; ++j) {
                sum += row[j];
                marg[static_cast<size_t>(j)] += row[j];
            }
            if (std::abs(sum - 1.0) > 1e-3)
                throw ValidationError("attention dump row not stochastic (sum " + std::to_string(sum) + "): " +
                                      payload.string());
        }
    const double inv = 1.0 / (static_cast<double>(heads) * static_cast<double>(n));
    for (double& v : marg) v *= inv;
    return AttentionDumpStats{heads, n, entropy_from_marginal(marg)};
}

struct DumpEntry {
    int64_t step = 0;
    int64_t layer = 0;
    int64_t sample = 0;
    std::filesystem::path payload;
};

struct EntropyAggregateRow {
    int64_t step = 0;
    int64_t layer = 0;
    int64_t n_samples = 0;
    int64_t n_tokens = 0;
    double mean = 0.0;
    double min = 0.0;
    double max = 0.0;
};

struct EntropySample {
    int64_t step = 0;
    int64_t layer = 0;
    double entropy = 0.0;
    int64_t n_tokens = 0;
};

// One row per (step, layer) with mean/min/max over samples; rows ordered by
// (step, layer).
inline std::vector<EntropyAggregateRow> aggregate_entropy_samples(const std::vector<EntropySample>& samples) {
    std::map<std::pair<int64_t, int64_t>, std::vector<EntropySample>> grouped;
    for (const auto& s : samples) grouped[{s.step, s.layer}].push_back(s);
    std::vector<EntropyAggregateRow> rows;
    rows.reserve(grouped.size());
    for (const auto& [key, vals] : grouped) {
        EntropyAggregateRow row;
        row.step = key.first;
        row.layer = key.second;
        row.n_samples = static_cast<int64_t>(vals.size());
        row.n_tokens = vals.front().n_tokens;
        double sum = 0.0;
        row.min = vals.front().entropy;
        row.max = vals.front().entropy;
        for (const auto& s : vals) {
            sum += s.entropy;
            row.min = std::min(row.min, s.entropy);
            row.max = std::max(row.max, s.entropy);
            if (s.n_tokens != row.n_tokens) row.n_tokens = 0;  // mixed support sizes
        }
        row.mean = sum / static_cast<double>(vals.size());
        rows.push_back(row);
    }
    return rows;
}

inline std::vector<EntropyAggregateRow> entropy_profile_from_dumps(const std::vector<DumpEntry>& entries) {
    std::vector<EntropySample> samples;
    samples.reserve(entries.size());
    for (const auto& e : entries) {
        const AttentionDumpStats stats = entropy_of_dump(e.payload);
        samples.push_back(EntropySample{e.step, e.layer, stats.entropy, stats.n_tokens});
    }
    return aggregate_entropy_samples(samples);
}

} // namespace sparsegrid
