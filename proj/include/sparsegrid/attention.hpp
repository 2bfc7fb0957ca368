// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sparsegrid/cube_grid.hpp"
#include "sparsegrid/errors.hpp"
#include "sparsegrid/mathx.hpp"
#include "sparsegrid/matrix.hpp"
#include "sparsegrid/parallel.hpp"

namespace sparsegrid {

// Finite stand-in for -inf on disallowed logits; large enough that the
// corresponding softmax weights underflow to exactly zero.
inline constexpr float kMaskSentinel = -1e9f;

struct AttentionConfig {
    int64_t n_heads = 1;
    int64_t d_model = 0;

    int64_t d_head() const { return d_model / n_heads; }
    float scale() const { return static_cast<float>(1.0 / std::sqrt(static_cast<double>(d_head()))); }

    void validate() const {
        if (n_heads < 1 || d_model < 1 || d_model % n_heads != 0)
            throw ValidationError("attention config: need n_heads >= 1 and n_heads | d_model");
    }
};

struct ProjectionWeights {
    Matrix wq, wk, wv, wo;  // each d_model x d_model
};

inline ProjectionWeights random_projections(uint64_t seed, int64_t d_model) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(d_model));
    return ProjectionWeights{
        random_matrix(mix_seed(seed, 0), d_model, d_model, scale),
        random_matrix(mix_seed(seed, 1), d_model, d_model, scale),
        random_matrix(mix_seed(seed, 2), d_model, d_model, scale),
        random_matrix(mix_seed(seed, 3), d_model, d_model, scale),
    };
}

inline Matrix identity_matrix(int64_t n) {
    Matrix m(n, n);
    for (int64_t i = 0; i < n; ++i) m.at(i, i) = 1.0f;
    return m;
}

// Post-softmax attention maps, one row-stochastic n x n matrix per head.
struct AttentionWeights {
    int64_t n_heads = 0;
    int64_t n_tokens = 0;
    std::vector<float> values;  // indexed (head * n + i) * n + j

    AttentionWeights() = default;
    AttentionWeights(int64_t heads, int64_t n)
        : n_heads(heads), n_tokens(n),
          values(static_cast<size_t>(heads) * static_cast<size_t>(n) * static_cast<size_t>(n), 0.0f) {}

    float at(int64_t h, int64_t i, int64_t j) const {
        return values[static_cast<size_t>((h * n_tokens + i) * n_tokens + j)];
    }
    float* row(int64_t h, int64_t i) {
        return values.data() + static_cast<size_t>((h * n_tokens + i) * n_tokens);
    }
    const float* row(int64_t h, int64_t i) const {
        return values.data() + static_cast<size_t>((h * n_tokens + i) * n_tokens);
    }
};

// Allowed query-key pairs: either a dense n x n binary matrix or a per-group
// selection over a BlockGrouping (the cube-level form).
struct AttentionMask {
    enum class Kind { dense, grouped };
    Kind kind = Kind::dense;
    int64_t n_tokens = 0;
    std::vector<uint8_t> allow;                        // dense form, n*n
    BlockGrouping grouping;                            // grouped form
    std::vector<std::vector<int32_t>> allowed_groups;  // grouped form, sorted per group

    static AttentionMask dense_mask(int64_t n, std::vector<uint8_t> allow_flags) {
        if (static_cast<int64_t>(allow_flags.size()) != n * n)
            throw ShapeError("dense mask: flag count must be n*n");
        AttentionMask m;
        m.kind = Kind::dense;
        m.n_tokens = n;
        m.allow = std::move(allow_flags);
        return m;
    }

    static AttentionMask all_allowed(int64_t n) {
        return dense_mask(n, std::vector<uint8_t>(static_cast<size_t>(n * n), 1));
    }

    static AttentionMask grouped_mask(BlockGrouping grouping, std::vector<std::vector<int32_t>> allowed) {
        if (allowed.size() != grouping.groups.size())
            throw ShapeError("grouped mask: one allowed-list per group required");
        AttentionMask m;
        m.kind = Kind::grouped;
        m.n_tokens = grouping.n_tokens;
        m.grouping = std::move(grouping);
        m.allowed_groups = std::move(allowed);
        for (auto& lst : m.allowed_groups) std::sort(lst.begin(), lst.end());
        return m;
    }

    bool allows(int64_t i, int64_t j) const {
        if (kind == Kind::dense) return allow[static_cast<size_t>(i * n_tokens + j)] != 0;
        const int32_t gq = grouping.group_of[static_cast<size_t>(i)];
        const int32_t gk = grouping.group_of[static_cast<size_t>(j)];
        const auto& lst = allowed_groups[static_cast<size_t>(gq)];
        return std::binary_search(lst.begin(), lst.end(), gk);
    }

    uint64_t allowed_pair_count() const {
        if (kind == Kind::dense) {
            uint64_t c = 0;
            for (uint8_t v : allow) c += v != 0;
            return c;
        }
        uint64_t c = 0;
        for (size_t g = 0; g < allowed_groups.size(); ++g) {
            uint64_t keys = 0;
            for (int32_t a : allowed_groups[g]) keys += grouping.groups[static_cast<size_t>(a)].size();
            c += static_cast<uint64_t>(grouping.groups[g].size()) * keys;
        }
        return c;
    }

    double density() const {
        return static_cast<double>(allowed_pair_count()) /
               (static_cast<double>(n_tokens) * static_cast<double>(n_tokens));
    }

    // Every query row must keep at least one allowed key.
    void validate() const {
        if (kind == Kind::dense) {
            for (int64_t i = 0; i < n_tokens; ++i) {
                bool any = false;
                for (int64_t j = 0; j < n_tokens && !any; ++j) any = allow[static_cast<size_t>(i * n_tokens + j)] != 0;
                if (!any) throw MaskError("mask row " + std::to_string(i) + " has no allowed keys");
            }
        } else {
            for (size_t g = 0; g < allowed_groups.size(); ++g)
                if (allowed_groups[g].empty())
                    throw MaskError("mask group " + std::to_string(g) + " has no allowed key groups");
        }
    }

    std::vector<uint8_t> to_dense() const {
        std::vector<uint8_t> out(static_cast<size_t>(n_tokens) * static_cast<size_t>(n_tokens), 0);
        for (int64_t i = 0; i < n_tokens; ++i)
            for (int64_t j = 0; j < n_tokens; ++j)
                out[static_cast<size_t>(i * n_tokens + j)] = allows(i, j) ? 1 : 0;
        return out;
    }
};

struct AttentionResult {
    Matrix output;
    std::optional<AttentionWeights> weights;
};

struct CubeSparseResult {
    Matrix output;
    std::optional<AttentionWeights> weights;
    AttentionMask mask;
};

namespace detail {

inline void softmax_row(float* logits, int64_t n) {
    float m = logits[0];
    for (int64_t j = 1; j < n; ++j) m = std::max(m, logits[j]);
    for (int64_t j = 0; j < n; ++j) logits[j] = fast_exp(logits[j] - m);
    float s = 0.0f;
    for (int64_t j = 0; j < n; ++j) s += logits[j];  // scalar, ascending
    const float inv = 1.0f / s;
    for (int64_t j = 0; j < n; ++j) logits[j] *= inv;
}

// logits[j] = sum_c q[c] * kt[c][j]; each logit accumulates in ascending
// channel order (rank-1 updates vectorize across j without reordering any
// per-element reduction).
inline void accumulate_logits(const float* q, const float* kt, int64_t stride, int64_t n, int64_t dk,
                              float* logits) {
    std::fill(logits, logits + n, 0.0f);
    for (int64_t c = 0; c < dk; ++c) {
        const float qc = q[c];
        const float* krow = kt + c * stride;
        for (int64_t j = 0; j < n; ++j) logits[j] += qc * krow[j];
    }
}

struct Projected {
    Matrix q, k, v;
};

inline Projected project_qkv(const Matrix& z, const ProjectionWeights& w, const AttentionConfig& cfg,
                             int threads) {
    cfg.validate();
    if (z.cols != cfg.d_model) throw ShapeError("attention: input cols != d_model");
    if (z.rows < 1) throw ShapeError("attention: empty input");
    require_shape(w.wq, cfg.d_model, cfg.d_model, "W_Q");
    require_shape(w.wk, cfg.d_model, cfg.d_model, "W_K");
    require_shape(w.wv, cfg.d_model, cfg.d_model, "W_V");
    require_shape(w.wo, cfg.d_model, cfg.d_model, "W_O");
    if (!all_finite(z)) throw NumericError("attention: non-finite input");
    return Projected{matmul(z, w.wq, threads), matmul(z, w.wk, threads), matmul(z, w.wv, threads)};
}

// Per-head transposed keys: slab (h*dk + c) holds K[:, h*dk+c] over the given
// token order.
inline std::vector<float> transpose_keys(const Matrix& k, int64_t n_heads, int64_t dk,
                                         const std::vector<int32_t>* order) {
    const int64_t n = k.rows;
    std::vector<float> kt(static_cast<size_t>(n_heads * dk * n));
    for (int64_t p = 0; p < n; ++p) {
        const int64_t tok = order ? (*order)[static_cast<size_t>(p)] : p;
        const float* row = k.row(tok);
        for (int64_t c = 0; c < n_heads * dk; ++c) kt[static_cast<size_t>(c * n + p)] = row[c];
    }
    return kt;
}

// Full-attention core, optionally with a dense binary mask. The all-allowed
// mask performs the identical arithmetic as no mask at all, so the two are
// bit-equal.
inline Matrix run_full(const Projected& p, const AttentionConfig& cfg, const std::vector<uint8_t>* allow,
                       AttentionWeights* keep, int threads) {
    const int64_t n = p.q.rows, heads = cfg.n_heads, dk = cfg.d_head();
    const float scale = cfg.scale();
    const std::vector<float> kt = transpose_keys(p.k, heads, dk, nullptr);
    Matrix ctx(n, cfg.d_model);
    parallel_for(n, threads, [&](int64_t lo, int64_t hi) {
        std::vector<float> logits(static_cast<size_t>(n));
        std::vector<float> qbuf(static_cast<size_t>(dk));
        for (int64_t i = lo; i < hi; ++i) {
            const uint8_t* arow = allow ? allow->data() + i * n : nullptr;
            for (int64_t h = 0; h < heads; ++h) {
                const float* qrow = p.q.row(i) + h * dk;
                for (int64_t c = 0; c < dk; ++c) qbuf[static_cast<size_t>(c)] = qrow[c] * scale;
                accumulate_logits(qbuf.data(), kt.data() + h * dk * n, n, n, dk, logits.data());
                if (arow)
                    for (int64_t j = 0; j < n; ++j)
                        if (!arow[j]) logits[static_cast<size_t>(j)] += kMaskSentinel;
                softmax_row(logits.data(), n);
                if (keep) std::copy(logits.begin(), logits.end(), keep->row(h, i));
                float* out = ctx.row(i) + h * dk;
                std::fill(out, out + dk, 0.0f);
                for (int64_t j = 0; j < n; ++j) {
                    const float wj = logits[static_cast<size_t>(j)];
                    const float* vrow = p.v.row(j) + h * dk;
                    for (int64_t c = 0; c < dk; ++c) out[c] += wj * vrow[c];
                }
            }
        }
    });
    return ctx;
}

// Grouped core: keys/values are gathered into group-major order once, and a
// query group is processed as one block so each allowed key range streams
// from memory once and is reused across the block's queries. Per output
// element the reduction order is unchanged (channels ascending for logits,
// keys ascending for the value sums), so results do not depend on the
// blocking or the thread count.
inline Matrix run_grouped(const Projected& p, const AttentionConfig& cfg, const BlockGrouping& grouping,
                          const std::vector<std::vector<int32_t>>& allowed, AttentionWeights* keep,
                          int threads) {
    const int64_t n = p.q.rows, heads = cfg.n_heads, dk = cfg.d_head();
    const float scale = cfg.scale();
    if (grouping.n_tokens != n) throw ShapeError("grouped attention: grouping does not match token count");

    const int64_t n_groups = grouping.n_groups();
    std::vector<int32_t> perm;
    perm.reserve(static_cast<size_t>(n));
    std::vector<int64_t> start(static_cast<size_t>(n_groups) + 1, 0);
    for (int64_t g = 0; g < n_groups; ++g) {
        start[static_cast<size_t>(g)] = static_cast<int64_t>(perm.size());
        for (int32_t tok : grouping.groups[static_cast<size_t>(g)]) perm.push_back(tok);
    }
    start[static_cast<size_t>(n_groups)] = static_cast<int64_t>(perm.size());

    const std::vector<float> kt = transpose_keys(p.k, heads, dk, &perm);
    Matrix vp(n, cfg.d_model);
    for (int64_t pos = 0; pos < n; ++pos)
        std::copy(p.v.row(perm[static_cast<size_t>(pos)]), p.v.row(perm[static_cast<size_t>(pos)]) + cfg.d_model,
                  vp.row(pos));

    Matrix ctx(n, cfg.d_model);
    parallel_for(n_groups, threads, [&](int64_t glo, int64_t ghi) {
        std::vector<float> logits;  // block of rows: one per query in the group
        std::vector<float> qbuf;    // scaled query rows for the current head
        std::vector<float> acc;     // value accumulators for the current head
        for (int64_t g = glo; g < ghi; ++g) {
            const auto& allow_list = allowed[static_cast<size_t>(g)];
            const auto& qtokens = grouping.groups[static_cast<size_t>(g)];
            const int64_t q_count = static_cast<int64_t>(qtokens.size());
            int64_t m_total = 0;
            for (int32_t a : allow_list) m_total += start[static_cast<size_t>(a) + 1] - start[static_cast<size_t>(a)];
            logits.resize(static_cast<size_t>(q_count * m_total));
            qbuf.resize(static_cast<size_t>(q_count * dk));
            acc.resize(static_cast<size_t>(q_count * dk));

            for (int64_t h = 0; h < heads; ++h) {
                for (int64_t qi = 0; qi < q_count; ++qi) {
                    const float* qrow = p.q.row(qtokens[static_cast<size_t>(qi)]) + h * dk;
                    for (int64_t c = 0; c < dk; ++c) qbuf[static_cast<size_t>(qi * dk + c)] = qrow[c] * scale;
                }
                // stage 1: logits, key range outer so the range stays hot
                int64_t pos = 0;
                for (int32_t a : allow_list) {
                    const int64_t s = start[static_cast<size_t>(a)];
                    const int64_t len = start[static_cast<size_t>(a) + 1] - s;
                    for (int64_t qi = 0; qi < q_count; ++qi) {
                        float* seg = logits.data() + qi * m_total + pos;
                        std::fill(seg, seg + len, 0.0f);
                        for (int64_t c = 0; c < dk; ++c) {
                            const float qc = qbuf[static_cast<size_t>(qi * dk + c)];
                            const float* krow = kt.data() + (h * dk + c) * n + s;
                            for (int64_t j = 0; j < len; ++j) seg[j] += qc * krow[j];
                        }
                    }
                    pos += len;
                }
                for (int64_t qi = 0; qi < q_count; ++qi) softmax_row(logits.data() + qi * m_total, m_total);
                if (keep) {
                    for (int64_t qi = 0; qi < q_count; ++qi) {
                        float* wrow = keep->row(h, qtokens[static_cast<size_t>(qi)]);
                        const float* lrow = logits.data() + qi * m_total;
                        int64_t w_pos = 0;
                        for (int32_t a : allow_list) {
                            const int64_t s = start[static_cast<size_t>(a)];
                            const int64_t len = start[static_cast<size_t>(a) + 1] - s;
                            for (int64_t j = 0; j < len; ++j)
                                wrow[perm[static_cast<size_t>(s + j)]] = lrow[w_pos++];
                        }
                    }
                }
                // stage 2: value sums, key range outer again
                std::fill(acc.begin(), acc.end(), 0.0f);
                int64_t v_pos = 0;
                for (int32_t a : allow_list) {
                    const int64_t s = start[static_cast<size_t>(a)];
                    const int64_t len = start[static_cast<size_t>(a) + 1] - s;
                    for (int64_t j = 0; j < len; ++j) {
                        const float* vrow = vp.row(s + j) + h * dk;
                        for (int64_t qi = 0; qi < q_count; ++qi) {
                            const float wj = logits[static_cast<size_t>(qi * m_total + v_pos + j)];
                            float* arow = acc.data() + qi * dk;
                            for (int64_t c = 0; c < dk; ++c) arow[c] += wj * vrow[c];
                        }
                    }
                    v_pos += len;
                }
                for (int64_t qi = 0; qi < q_count; ++qi) {
                    float* out = ctx.row(qtokens[static_cast<size_t>(qi)]) + h * dk;
                    std::copy(acc.data() + qi * dk, acc.data() + (qi + 1) * dk, out);
                }
            }
        }
    });
    return ctx;
}

// Cube scores: pooled-Q . pooled-K per head, averaged over heads. Heads
// partition the channels, so the head average equals the full-d dot / H.
inline std::vector<std::vector<int32_t>> select_topk_groups(const Matrix& pooled_q, const Matrix& pooled_k,
                                                            int64_t n_heads, int64_t k_groups, int threads) {
    const int64_t n = pooled_q.rows;
    std::vector<std::vector<int32_t>> allowed(static_cast<size_t>(n));
    parallel_for(n, threads, [&](int64_t lo, int64_t hi) {
        std::vector<std::pair<double, int32_t>> cand;
        for (int64_t qg = lo; qg < hi; ++qg) {
            cand.clear();
            for (int64_t kg = 0; kg < n; ++kg) {
                if (kg == qg) continue;
                double acc = 0.0;
                const float* qr = pooled_q.row(qg);
                const float* kr = pooled_k.row(kg);
                for (int64_t c = 0; c < pooled_q.cols; ++c) acc += static_cast<double>(qr[c]) * kr[c];
                cand.emplace_back(acc / static_cast<double>(n_heads), static_cast<int32_t>(kg));
            }
            // ties break toward the lower cube index
            const int64_t take = k_groups - 1;
            std::partial_sort(cand.begin(), cand.begin() + take, cand.end(),
                              [](const auto& a, const auto& b) {
                                  return a.first > b.first || (a.first == b.first && a.second < b.second);
                              });
            auto& lst = allowed[static_cast<size_t>(qg)];
            lst.push_back(static_cast<int32_t>(qg));
            for (int64_t i = 0; i < take; ++i) lst.push_back(cand[static_cast<size_t>(i)].second);
            std::sort(lst.begin(), lst.end());
        }
    });
    return allowed;
}

} // namespace detail

// Standard multi-head softmax(Q K^T / sqrt(d_k)) V followed by the output
// projection.
inline AttentionResult dense_attention(const Matrix& z, const ProjectionWeights& w, const AttentionConfig& cfg,
                                       bool keep_weights = false, int threads = 1) {
    const detail::Projected p = detail::project_qkv(z, w, cfg, threads);
    AttentionWeights weights;
    if (keep_weights) weights = AttentionWeights(cfg.n_heads, z.rows);
    Matrix ctx = detail::run_full(p, cfg, nullptr, keep_weights ? &weights : nullptr, threads);
    AttentionResult res{matmul(ctx, w.wo, threads), std::nullopt};
    if (keep_weights) res.weights = std::move(weights);
    return res;
}

// Masked variant: disallowed logits receive a -1e9 sentinel before softmax,
// so allowed entries renormalize per row and disallowed weights are exactly
// zero. With an all-ones dense mask this is bit-identical to dense_attention.
inline AttentionResult masked_attention(const Matrix& z, const ProjectionWeights& w, const AttentionConfig& cfg,
                                        const AttentionMask& mask, bool keep_weights = false, int threads = 1) {
    if (mask.n_tokens != z.rows) throw ShapeError("masked attention: mask size != token count");
    mask.validate();
    const detail::Projected p = detail::project_qkv(z, w, cfg, threads);
    AttentionWeights weights;
    if (keep_weights) weights = AttentionWeights(cfg.n_heads, z.rows);
    Matrix ctx = mask.kind == AttentionMask::Kind::dense
                     ? detail::run_full(p, cfg, &mask.allow, keep_weights ? &weights : nullptr, threads)
                     : detail::run_grouped(p, cfg, mask.grouping, mask.allowed_groups,
                                           keep_weights ? &weights : nullptr, threads);
    AttentionResult res{matmul(ctx, w.wo, threads), std::nullopt};
    if (keep_weights) res.weights = std::move(weights);
    return res;
}

// Two-stage sparse attention over an arbitrary block grouping: stage 1 pools
// queries/keys per group and scores group pairs; stage 2 keeps each query
// group's own block plus its top-(k-1) scoring partners and runs masked
// attention over the expansion. Returns the realized mask for cost
// accounting.
inline CubeSparseResult grouped_topk_attention(const Matrix& z, const ProjectionWeights& w,
                                               const AttentionConfig& cfg, const BlockGrouping& grouping,
                                               int64_t k_groups, bool keep_weights = false, int threads = 1) {
    if (k_groups < 1 || k_groups > grouping.n_groups())
        throw ParamError("k_groups " + std::to_string(k_groups) + " outside [1, " +
                         std::to_string(grouping.n_groups()) + "]");
    const detail::Projected p = detail::project_qkv(z, w, cfg, threads);
    const Matrix pooled_q = pool_groups(p.q, grouping);
    const Matrix pooled_k = pool_groups(p.k, grouping);
    auto allowed = detail::select_topk_groups(pooled_q, pooled_k, cfg.n_heads, k_groups, threads);
    AttentionWeights weights;
    if (keep_weights) weights = AttentionWeights(cfg.n_heads, z.rows);
    Matrix ctx = detail::run_grouped(p, cfg, grouping, allowed, keep_weights ? &weights : nullptr, threads);
    CubeSparseResult res{matmul(ctx, w.wo, threads), std::nullopt,
                         AttentionMask::grouped_mask(grouping, std::move(allowed))};
    if (keep_weights) res.weights = std::move(weights);
    return res;
}

inline CubeSparseResult cube_sparse_attention(const Matrix& z, const ProjectionWeights& w,
                                              const AttentionConfig& cfg, const CubeLayout& layout,
                                              int64_t k_cubes, bool keep_weights = false, int threads = 1) {
    if (z.rows != layout.n_tokens()) throw ShapeError("cube sparse attention: layout does not match token count");
    return grouped_topk_attention(z, w, cfg, BlockGrouping::from_layout(layout), k_cubes, keep_weights, threads);
}

} // namespace sparsegrid
