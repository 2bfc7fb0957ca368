// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "sparsegrid/entropy_policy.hpp"
#include "sparsegrid/tensor_io.hpp"

using namespace sparsegrid;
namespace fs = std::filesystem;

namespace {

AttentionWeights uniform_weights(int64_t heads, int64_t n) {
    AttentionWeights w(heads, n);
    const float v = 1.0f / static_cast<float>(n);
    for (float& x : w.values) x = v;
    return w;
}

AttentionWeights one_hot_weights(int64_t heads, int64_t n, int64_t key) {
    AttentionWeights w(heads, n);
    for (int64_t h = 0; h < heads; ++h)
        for (int64_t i = 0; i < n; ++i) w.row(h, i)[key] = 1.0f;
    return w;
}

fs::path temp_dir() {
    const fs::path dir = fs::temp_directory_path() / "sparsegrid_entropy_test";
    fs::create_directories(dir);
    return dir;
}

void write_weight_dump(const AttentionWeights& w, const fs::path& path) {
    TokenGrid g(GridDims{w.n_heads, w.n_tokens, w.n_tokens, 1});
    g.data = w.values;
    write_tensor(g, path);
}

} // namespace

TEST_CASE("uniform attention has entropy one") {
    REQUIRE_THAT(attention_entropy(uniform_weights(2, 16)), Catch::Matchers::WithinAbs(1.0, 1e-6));
}

TEST_CASE("shared one-hot attention has entropy zero") {
    REQUIRE_THAT(attention_entropy(one_hot_weights(2, 16, 3)), Catch::Matchers::WithinAbs(0.0, 1e-6));
}

TEST_CASE("half-support marginal has entropy one half") {
    REQUIRE_THAT(entropy_from_marginal({0.5, 0.5, 0.0, 0.0}), Catch::Matchers::WithinAbs(0.5, 1e-9));
    // same case routed through attention weights: half the queries pin key 0,
    // half pin key 1
    AttentionWeights w(1, 4);
    w.row(0, 0)[0] = 1.0f;
    w.row(0, 1)[0] = 1.0f;
    w.row(0, 2)[1] = 1.0f;
    w.row(0, 3)[1] = 1.0f;
    REQUIRE_THAT(attention_entropy(w), Catch::Matchers::WithinAbs(0.5, 1e-6));
}

TEST_CASE("entropy of a single key is undefined") {
    REQUIRE_THROWS_AS(attention_entropy(uniform_weights(1, 1)), UndefinedEntropyError);
}

TEST_CASE("importance weights follow (1-h)^gamma") {
    const auto w1 = importance_weights({0.2, 0.8}, 1.0);
    REQUIRE_THAT(w1[0], Catch::Matchers::WithinAbs(0.8, 1e-12));
    REQUIRE_THAT(w1[1], Catch::Matchers::WithinAbs(0.2, 1e-12));
    const auto w2 = importance_weights({0.2, 0.8}, 2.0);
    REQUIRE_THAT(w2[0], Catch::Matchers::WithinAbs(0.64, 1e-12));
    REQUIRE_THAT(w2[1], Catch::Matchers::WithinAbs(0.04, 1e-12));
    REQUIRE_THAT(w2[0] / w2[1], Catch::Matchers::WithinAbs(16.0, 1e-9));

    const auto we = importance_weights({0.5, 0.5, 0.5}, 3.0);
    REQUIRE(we[0] == we[1]);
    REQUIRE(we[1] == we[2]);
}

namespace {

BaseSchedule one_step_schedule(double rho_attn, double rho_token) {
    BaseSchedule s;
    s.steps = {0};
    s.rho_attn_base = {rho_attn};
    s.rho_token_base = {rho_token};
    return s;
}

} // namespace

TEST_CASE("allocation spreads the base by importance and preserves the mean") {
    EntropyProfile profile;
    profile.h = {{0.2, 0.8}};
    profile.n_tokens_used = 64;
    PolicyParams params;
    params.gamma = 1.0;
    params.rho_attn_max = 0.95;
    params.rho_token_max = 0.95;
    const GridBudget budget{64, 8};

    const SparsityAllocation a = allocate(profile, one_step_schedule(0.5, 0.5), params, budget);
    REQUIRE_THAT(a.attn.rho[0][0], Catch::Matchers::WithinAbs(0.8, 1e-9));
    REQUIRE_THAT(a.attn.rho[0][1], Catch::Matchers::WithinAbs(0.2, 1e-9));
    REQUIRE(a.attn.feasible[0]);
    REQUIRE_THAT((a.attn.rho[0][0] + a.attn.rho[0][1]) / 2.0, Catch::Matchers::WithinAbs(0.5, 1e-6));
}

TEST_CASE("allocation clips then redistributes the residual") {
    EntropyProfile profile;
    profile.h = {{0.2, 0.8}};
    profile.n_tokens_used = 64;
    PolicyParams params;
    params.gamma = 1.0;
    params.rho_attn_max = 0.95;
    const GridBudget budget{64, 8};

    const SparsityAllocation a = allocate(profile, one_step_schedule(0.7, 0.0), params, budget);
    REQUIRE_THAT(a.attn.rho[0][0], Catch::Matchers::WithinAbs(0.95, 1e-9));
    REQUIRE_THAT(a.attn.rho[0][1], Catch::Matchers::WithinAbs(0.45, 1e-9));
    REQUIRE(a.attn.clipped[0][0]);
    REQUIRE_FALSE(a.attn.clipped[0][1]);
    REQUIRE(a.attn.feasible[0]);
}

TEST_CASE("equal entropies give every layer the base ratio") {
    EntropyProfile profile;
    profile.h = {{0.4, 0.4, 0.4, 0.4}};
    profile.n_tokens_used = 32;
    PolicyParams params;
    params.gamma = 3.0;
    const SparsityAllocation a = allocate(profile, one_step_schedule(0.6, 0.3), params, GridBudget{32, 4});
    for (double v : a.attn.rho[0]) REQUIRE_THAT(v, Catch::Matchers::WithinAbs(0.6, 1e-12));
    for (double v : a.token.rho[0]) REQUIRE_THAT(v, Catch::Matchers::WithinAbs(0.3, 1e-12));
}

TEST_CASE("budget preservation holds over random feasible instances") {
    SplitMix64 rng(43);
    for (int trial = 0; trial < 200; ++trial) {
        const int64_t L = 1 + static_cast<int64_t>(rng.next_u64() % 8);
        EntropyProfile profile;
        profile.h = {std::vector<double>(static_cast<size_t>(L))};
        for (auto& v : profile.h[0]) v = rng.next_unit();
        profile.n_tokens_used = 128;
        PolicyParams params;
        params.gamma = 1.0 + 3.0 * rng.next_unit();
        const double lo = rng.next_unit() * 0.4;
        const double hi = lo + 0.05 + (1.0 - lo - 0.05) * rng.next_unit();
        params.rho_attn_min = params.rho_token_min = lo;
        params.rho_attn_max = params.rho_token_max = hi;
        // base inside the bounds -> must be feasible
        const double base = lo + (hi - lo) * rng.next_unit();
        const SparsityAllocation a = allocate(profile, one_step_schedule(base, base), params, GridBudget{128, 16});

        REQUIRE(a.attn.feasible[0]);
        double mean = 0.0;
        for (double v : a.attn.rho[0]) {
            REQUIRE(v >= lo);
            REQUIRE(v <= hi);
            mean += v;
        }
        mean /= static_cast<double>(L);
        REQUIRE_THAT(mean, Catch::Matchers::WithinAbs(base, 1e-6));
        for (int64_t l = 0; l < L; ++l) {
            REQUIRE(a.k_token[0][static_cast<size_t>(l)] <= 128 - 16);
            REQUIRE(a.k_cubes[0][static_cast<size_t>(l)] >= 1);
            REQUIRE(a.k_cubes[0][static_cast<size_t>(l)] <= 16);
        }
    }
}

TEST_CASE("infeasible bounds are flagged") {
    EntropyProfile profile;
    profile.h = {{0.1, 0.9}};
    profile.n_tokens_used = 16;
    PolicyParams params;
    params.rho_attn_min = 0.0;
    params.rho_attn_max = 0.3;  // base 0.8 unreachable
    const SparsityAllocation a = allocate(profile, one_step_schedule(0.8, 0.0), params, GridBudget{16, 2});
    REQUIRE_FALSE(a.attn.feasible[0]);
    for (double v : a.attn.rho[0]) REQUIRE(v <= 0.3);
}

TEST_CASE("lower entropy never receives less sparsity before clipping") {
    EntropyProfile profile;
    profile.h = {{0.1, 0.35, 0.6, 0.95}};
    profile.n_tokens_used = 16;
    PolicyParams params;  // wide open bounds: pre-clip order survives
    params.gamma = 2.0;
    const SparsityAllocation a = allocate(profile, one_step_schedule(0.2, 0.2), params, GridBudget{16, 2});
    for (size_t l = 1; l < 4; ++l) REQUIRE(a.attn.rho[0][l - 1] >= a.attn.rho[0][l]);
}

TEST_CASE("gamma widens the pre-clip spread by the stated power law") {
    const std::vector<double> h = {0.2, 0.6};
    for (double gamma : {1.0, 2.0, 4.0}) {
        const auto w = importance_weights(h, gamma);
        const double ratio = w[0] / w[1];
        REQUIRE_THAT(ratio, Catch::Matchers::WithinAbs(std::pow((1.0 - 0.2) / (1.0 - 0.6), gamma), 1e-9));
    }
}

TEST_CASE("profile and schedule dimensions must agree") {
    EntropyProfile profile;
    profile.h = {{0.5, 0.5}, {0.5, 0.5}};
    profile.n_tokens_used = 16;
    REQUIRE_THROWS_AS(allocate(profile, one_step_schedule(0.5, 0.5), PolicyParams{}, GridBudget{16, 2}), ShapeError);
}

TEST_CASE("dump entropy round trip") {
    const fs::path dir = temp_dir();
    write_weight_dump(uniform_weights(2, 8), dir / "attn_step0_layer0_sample0.tensor");
    const AttentionDumpStats stats = entropy_of_dump(dir / "attn_step0_layer0_sample0.tensor");
    REQUIRE(stats.n_heads == 2);
    REQUIRE(stats.n_tokens == 8);
    REQUIRE_THAT(stats.entropy, Catch::Matchers::WithinAbs(1.0, 1e-6));
}

TEST_CASE("dump aggregation reports mean min max") {
    const fs::path dir = temp_dir();
    // sample 0: uniform (h = 1); sample 1: one-hot (h = 0)
    write_weight_dump(uniform_weights(1, 8), dir / "agg_s0.tensor");
    write_weight_dump(one_hot_weights(1, 8, 2), dir / "agg_s1.tensor");
    const std::vector<DumpEntry> entries = {{0, 0, 0, dir / "agg_s0.tensor"}, {0, 0, 1, dir / "agg_s1.tensor"}};
    const auto rows = entropy_profile_from_dumps(entries);
    REQUIRE(rows.size() == 1);
    REQUIRE(rows[0].n_samples == 2);
    REQUIRE_THAT(rows[0].mean, Catch::Matchers::WithinAbs(0.5, 1e-6));
    REQUIRE_THAT(rows[0].min, Catch::Matchers::WithinAbs(0.0, 1e-6));
    REQUIRE_THAT(rows[0].max, Catch::Matchers::WithinAbs(1.0, 1e-6));
}

TEST_CASE("non-stochastic dump rows are a validation error") {
    const fs::path dir = temp_dir();
    AttentionWeights w = uniform_weights(1, 4);
    for (int64_t j = 0; j < 4; ++j) w.row(0, 2)[j] = 0.125f;  // row sums to 0.5
    write_weight_dump(w, dir / "bad.tensor");
    REQUIRE_THROWS_AS(entropy_of_dump(dir / "bad.tensor"), ValidationError);
}
