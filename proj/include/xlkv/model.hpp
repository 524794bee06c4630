#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "xlkv/config.hpp"
#include "xlkv/counters.hpp"
#include "xlkv/ops.hpp"
#include "xlkv/tape.hpp"
#include "xlkv/tensor.hpp"
#include "xlkv/topology.hpp"

namespace xlkv {

// K/V rows produced by one cache layer; k/v are (rows x kv_dim), K already
// position-rotated. numel()==0 means "not computed yet".
template <typename T>
struct LayerKV {
    Tensor<T> k{Shape{0, 0}};
    Tensor<T> v{Shape{0, 0}};
    bool present() const { return k.numel() > 0; }
};

// 1-based by layer: stash[i] holds layer i's K/V. stash[0] unused.
template <typename T>
using KVStash = std::vector<LayerKV<T>>;

template <typename T>
struct LayerWeights {
    Tensor<T> attn_norm; // (hidden)
    Tensor<T> wq;        // (hidden, q_dim)
    Tensor<T> wk;        // (hidden, kv_dim), cache layers only
    Tensor<T> wv;        // (hidden, kv_dim), cache layers only
    Tensor<T> wo;        // (q_dim, hidden)
    Tensor<T> mlp_norm;  // (hidden)
    Tensor<T> w_gate;    // (hidden, intermediate)
    Tensor<T> w_up;      // (hidden, intermediate)
    Tensor<T> w_down;    // (intermediate, hidden)
    bool has_kv = false;
};

// Grouped-query attention against a shared K/V source. Each query head h
// reads K/V head h / (n_heads / n_kv_heads). An absent source (0 rows)
// contributes exactly zero.
template <typename T>
Tensor<T> attend(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, int n_heads,
                 int n_kv_heads, int head_dim, const Mask* mask) {
    const auto n = q.dim(0);
    const auto q_dim = static_cast<std::int64_t>(n_heads) * head_dim;
    if (q.dim(1) != q_dim) {
        throw shape_error("attend: query width " + std::to_string(q.dim(1)) + " != " +
                          std::to_string(q_dim));
    }
    if (k.numel() == 0) return Tensor<T>({n, q_dim});
    if (k.shape() != v.shape() || k.dim(1) != static_cast<std::int64_t>(n_kv_heads) * head_dim) {
        throw shape_error("attend: bad source shapes " + shape_str(k.shape()) + " / " +
                          shape_str(v.shape()));
    }
    const int group = n_heads / n_kv_heads;
    const T inv_scale = T(1) / std::sqrt(static_cast<T>(head_dim));
    std::vector<Tensor<T>> head_outs;
    head_outs.reserve(static_cast<size_t>(n_heads));
    for (int h = 0; h < n_heads; ++h) {
        const int g = h / group;
        Tensor<T> qh = cols(q, static_cast<std::int64_t>(h) * head_dim,
                            static_cast<std::int64_t>(h + 1) * head_dim);
        Tensor<T> kg = cols(k, static_cast<std::int64_t>(g) * head_dim,
                            static_cast<std::int64_t>(g + 1) * head_dim);
        Tensor<T> vg = cols(v, static_cast<std::int64_t>(g) * head_dim,
                            static_cast<std::int64_t>(g + 1) * head_dim);
        Tensor<T> scores = scale(matmul(qh, transpose(kg)), inv_scale);
        Tensor<T> probs = softmax_rows(scores, mask);
        head_outs.push_back(matmul(probs, vg));
    }
    return concat(head_outs, 1);
}

// One transformer layer: pre-norm attention against the given shared K/V
// source, then pre-norm SwiGLU MLP, both residual. When fresh_kv is set the
// layer's own K/V are computed from the attention-norm output *before* the
// attention reads src, so a layer may serve as its own source in one pass.
template <typename T>
Tensor<T> layer_forward(const ModelConfig& cfg, const LayerWeights<T>& lw, const Tensor<T>& x,
                        const std::vector<std::int64_t>& q_pos, const LayerKV<T>* src,
                        const Mask* mask, LayerKV<T>* fresh_kv) {
    const T eps = static_cast<T>(cfg.norm_eps);
    Tensor<T> h = rms_norm(x, lw.attn_norm, eps);
    if (fresh_kv) {
        fresh_kv->k = rope(matmul(h, lw.wk), cfg.head_dim, q_pos, cfg.rope_base);
        fresh_kv->v = matmul(h, lw.wv);
    }
    Tensor<T> attn_out;
    if (src && src->present()) {
        Tensor<T> q = rope(matmul(h, lw.wq), cfg.head_dim, q_pos, cfg.rope_base);
        attn_out = attend(q, src->k, src->v, cfg.n_heads, cfg.n_kv_heads, cfg.head_dim, mask);
    } else {
        attn_out = Tensor<T>({x.dim(0), static_cast<std::int64_t>(cfg.q_dim())});
    }
    Tensor<T> x1 = add(x, matmul(attn_out, lw.wo));
    Tensor<T> h2 = rms_norm(x1, lw.mlp_norm, eps);
    return add(x1, swiglu(h2, lw.w_gate, lw.w_up, lw.w_down));
}

// Tape bookkeeping probes for the iterative forward.
struct IterDiag {
    std::int64_t nodes_at_iter_start = 0;
    std::int64_t nodes_after_stopped_iters = 0;
    int stopped_iterations = 0;
    int differentiable_iterations = 0;
};

template <typename T>
struct Model {
    ModelConfig cfg;
    KVTopology topo;

    Tensor<T> tok_embed;  // (vocab, hidden)
    std::vector<LayerWeights<T>> layers;
    Tensor<T> final_norm; // (hidden)
    Tensor<T> lm_head;    // (hidden, vocab), absent when embeddings are tied

    static Model make(ModelConfig cfg, const KVTopology& topo) {
        cfg.validate();
        if (topo.num_layers() != cfg.n_layers) {
            throw config_error("model: layer map covers " + std::to_string(topo.num_layers()) +
                               " layers but config has " + std::to_string(cfg.n_layers));
        }
        Model m;
        m.cfg = cfg;
        m.topo = topo;
        const auto hid = static_cast<std::int64_t>(cfg.hidden);
        const auto inter = static_cast<std::int64_t>(cfg.intermediate);
        const auto qd = static_cast<std::int64_t>(cfg.q_dim());
        const auto kvd = static_cast<std::int64_t>(cfg.kv_dim());
        m.tok_embed = Tensor<T>({static_cast<std::int64_t>(cfg.vocab_size), hid});
        m.final_norm = Tensor<T>({hid});
        if (!cfg.tie_embeddings) {
            m.lm_head = Tensor<T>({hid, static_cast<std::int64_t>(cfg.vocab_size)});
        }
        m.layers.resize(static_cast<size_t>(cfg.n_layers));
        for (int i = 1; i <= cfg.n_layers; ++i) {
            auto& lw = m.layers[static_cast<size_t>(i - 1)];
            lw.attn_norm = Tensor<T>({hid});
            lw.wq = Tensor<T>({hid, qd});
            lw.wo = Tensor<T>({qd, hid});
            lw.mlp_norm = Tensor<T>({hid});
            lw.w_gate = Tensor<T>({hid, inter});
            lw.w_up = Tensor<T>({hid, inter});
            lw.w_down = Tensor<T>({inter, hid});
            lw.has_kv = topo.is_kv_layer(i);
            if (lw.has_kv) {
                lw.wk = Tensor<T>({hid, kvd});
                lw.wv = Tensor<T>({hid, kvd});
            }
        }
        return m;
    }

    void init_random(std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> dist(0.0, 0.02);
        // residual-output projections get the usual depth-scaled std
        const double resid_std = 0.02 / std::sqrt(2.0 * cfg.n_layers);
        auto fill = [&](Tensor<T>& t, double sd) {
            for (std::int64_t i = 0; i < t.numel(); ++i)
                t.data()[i] = static_cast<T>(dist(rng) / 0.02 * sd);
        };
        auto ones = [&](Tensor<T>& t) {
            for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] = T(1);
        };
        fill(tok_embed, 0.02);
        for (auto& lw : layers) {
            ones(lw.attn_norm);
            fill(lw.wq, 0.02);
            if (lw.has_kv) {
                fill(lw.wk, 0.02);
                fill(lw.wv, 0.02);
            }
            fill(lw.wo, resid_std);
            ones(lw.mlp_norm);
            fill(lw.w_gate, 0.02);
            fill(lw.w_up, 0.02);
            fill(lw.w_down, resid_std);
        }
        ones(final_norm);
        if (!cfg.tie_embeddings) fill(lm_head, 0.02);
    }

    std::vector<std::pair<std::string, Tensor<T>*>> named_parameters() {
        std::vector<std::pair<std::string, Tensor<T>*>> out;
        out.emplace_back("tok_embed", &tok_embed);
        for (int i = 1; i <= cfg.n_layers; ++i) {
            auto& lw = layers[static_cast<size_t>(i - 1)];
            const std::string p = "layers." + std::to_string(i) + ".";
            out.emplace_back(p + "attn_norm", &lw.attn_norm);
            out.emplace_back(p + "wq", &lw.wq);
            if (lw.has_kv) {
                out.emplace_back(p + "wk", &lw.wk);
                out.emplace_back(p + "wv", &lw.wv);
            }
            out.emplace_back(p + "wo", &lw.wo);
            out.emplace_back(p + "mlp_norm", &lw.mlp_norm);
            out.emplace_back(p + "w_gate", &lw.w_gate);
            out.emplace_back(p + "w_up", &lw.w_up);
            out.emplace_back(p + "w_down", &lw.w_down);
        }
        out.emplace_back("final_norm", &final_norm);
        if (!cfg.tie_embeddings) out.emplace_back("lm_head", &lm_head);
        return out;
    }

    std::vector<Tensor<T>*> parameters() {
        std::vector<Tensor<T>*> out;
        for (auto& [name, t] : named_parameters()) out.push_back(t);
        return out;
    }

    std::int64_t parameter_count() {
        std::int64_t n = 0;
        for (auto* t : parameters()) n += t->numel();
        return n;
    }

    void watch_all(Tape<T>& tape) {
        for (auto* t : parameters()) tape.watch(*t);
    }

    void untrack_all() {
        for (auto* t : parameters()) t->untrack();
    }

    Tensor<T> logits_from(const Tensor<T>& acts) const {
        Tensor<T> h = rms_norm(acts, final_norm, static_cast<T>(cfg.norm_eps));
        if (cfg.tie_embeddings) return matmul(h, transpose(tok_embed));
        return matmul(h, lm_head);
    }

    void check_tokens(const std::vector<std::int32_t>& tokens) const {
        if (tokens.empty()) throw data_error("forward: empty token sequence");
        if (static_cast<int>(tokens.size()) > cfg.max_len) {
            throw data_error("forward: sequence of " + std::to_string(tokens.size()) +
                             " tokens exceeds maximum length " + std::to_string(cfg.max_len));
        }
    }

    // Single full-stack pass over the whole sequence. Valid only when the
    // layer map has no upward dependency (every layer's source exists by the
    // time the layer runs); tokens attend themselves. With early_exit, layers
    // above the last cache layer process only the final position; the
    // returned activations then carry a single row.
    Tensor<T> forward_single_pass(const std::vector<std::int32_t>& tokens, KVStash<T>& stash,
                                  StageCounters* sc, bool early_exit = false) const {
        check_tokens(tokens);
        if (topo.has_upward_dependency()) {
            throw state_error("forward_single_pass: layer map has upward dependencies");
        }
        const auto n = static_cast<std::int64_t>(tokens.size());
        std::vector<std::int64_t> pos(static_cast<size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) pos[static_cast<size_t>(i)] = i;
        stash.assign(static_cast<size_t>(cfg.n_layers) + 1, LayerKV<T>{});
        const Mask mask = Mask::causal(n, n, 0);
        const int max_kv = topo.max_kv_layer();
        Tensor<T> x = embedding(tok_embed, tokens);
        int i = 1;
        for (; i <= max_kv; ++i) {
            const auto& lw = layers[static_cast<size_t>(i - 1)];
            LayerKV<T>* fresh = lw.has_kv ? &stash[static_cast<size_t>(i)] : nullptr;
            x = layer_forward(cfg, lw, x, pos, &stash[static_cast<size_t>(topo.target(i))], &mask,
                              fresh);
            if (sc) sc->record(i, n);
        }
        if (early_exit && n > 1) {
            x = rows(x, n - 1, n);
            pos.assign(1, n - 1);
        }
        // rows now attend the full stash; every allowed position is present
        const Mask tail_mask = Mask::causal(x.dim(0), n, n - x.dim(0));
        for (; i <= cfg.n_layers; ++i) {
            const auto& lw = layers[static_cast<size_t>(i - 1)];
            x = layer_forward(cfg, lw, x, pos, &stash[static_cast<size_t>(topo.target(i))],
                              &tail_mask, static_cast<LayerKV<T>*>(nullptr));
            if (sc) sc->record(i, x.dim(0));
        }
        return x;
    }

    // Iterative forward for maps with upward dependencies. Layers below the
    // iteration range run once; the in-range stack then runs
    // stopped_iterations times with gradient recording suspended followed by
    // differentiable_iterations recorded ones, each iteration restarting
    // from the below-range activations and attending the previous
    // iteration's stashed K/V of its source layer (first iteration: absent,
    // zero attention). Layers above the range run once on the final state.
    // Tokens never attend themselves here. With early_exit, above-range
    // layers beyond the last cache layer process only the final position.
    Tensor<T> forward_iterative(const std::vector<std::int32_t>& tokens, int stopped_iterations,
                                int differentiable_iterations, KVStash<T>& stash,
                                StageCounters* sc, IterDiag* diag = nullptr,
                                bool early_exit = false) const {
        check_tokens(tokens);
        if (!topo.has_upward_dependency()) {
            throw state_error("forward_iterative: layer map has no upward dependency");
        }
        const LayerRange range = *topo.iter_range();
        if (stopped_iterations < 0 || differentiable_iterations < 0 ||
            stopped_iterations + differentiable_iterations < 1) {
            throw config_error("forward_iterative: need at least one iteration");
        }
        const auto n = static_cast<std::int64_t>(tokens.size());
        std::vector<std::int64_t> pos(static_cast<size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) pos[static_cast<size_t>(i)] = i;
        Mask mask = Mask::causal(n, n, 0);
        mask.mask_diagonal(0);

        Tape<T>* tape = tok_embed.tracked() && tok_embed.tape()->recording() ? tok_embed.tape()
                                                                             : nullptr;
        if (diag) {
            *diag = IterDiag{};
            diag->stopped_iterations = stopped_iterations;
            diag->differentiable_iterations = differentiable_iterations;
        }

        Tensor<T> xb = embedding(tok_embed, tokens);
        KVStash<T> below(static_cast<size_t>(cfg.n_layers) + 1);
        for (int i = 1; i < range.first; ++i) {
            const auto& lw = layers[static_cast<size_t>(i - 1)];
            LayerKV<T>* fresh = lw.has_kv ? &below[static_cast<size_t>(i)] : nullptr;
            xb = layer_forward(cfg, lw, xb, pos, &below[static_cast<size_t>(topo.target(i))],
                               &mask, fresh);
            if (sc) sc->record(i, n);
        }

        if (diag && tape) diag->nodes_at_iter_start = tape->size();
        KVStash<T> cur = below;
        Tensor<T> x = xb;
        const int total = stopped_iterations + differentiable_iterations;
        for (int it = 1; it <= total; ++it) {
            std::optional<NoGradGuard<T>> guard;
            if (it <= stopped_iterations && tape) guard.emplace(tape);
            KVStash<T> next = below;
            x = xb;
            for (int i = range.first; i <= range.last; ++i) {
                const auto& lw = layers[static_cast<size_t>(i - 1)];
                LayerKV<T>* fresh = lw.has_kv ? &next[static_cast<size_t>(i)] : nullptr;
                x = layer_forward(cfg, lw, x, pos, &cur[static_cast<size_t>(topo.target(i))],
                                  &mask, fresh);
                if (sc) sc->record(i, n);
            }
            cur = std::move(next);
            if (diag && tape && it == stopped_iterations)
                diag->nodes_after_stopped_iters = tape->size();
        }
        if (diag && tape && stopped_iterations == 0)
            diag->nodes_after_stopped_iters = diag->nodes_at_iter_start;

        const int max_kv = topo.max_kv_layer();
        int i = range.last + 1;
        for (; i <= cfg.n_layers && i <= max_kv; ++i) {
            const auto& lw = layers[static_cast<size_t>(i - 1)];
            LayerKV<T>* fresh = lw.has_kv ? &cur[static_cast<size_t>(i)] : nullptr;
            x = layer_forward(cfg, lw, x, pos, &cur[static_cast<size_t>(topo.target(i))], &mask,
                              fresh);
            if (sc) sc->record(i, n);
        }
        std::vector<std::int64_t> tail_pos = pos;
        if (early_exit && i <= cfg.n_layers && n > 1) {
            x = rows(x, n - 1, n);
            tail_pos.assign(1, n - 1);
        }
        Mask tail_mask = Mask::causal(x.dim(0), n, n - x.dim(0));
        tail_mask.mask_diagonal(n - x.dim(0));
        for (; i <= cfg.n_layers; ++i) {
            const auto& lw = layers[static_cast<size_t>(i - 1)];
            x = layer_forward(cfg, lw, x, tail_pos, &cur[static_cast<size_t>(topo.target(i))],
                              &tail_mask, static_cast<LayerKV<T>*>(nullptr));
            if (sc) sc->record(i, x.dim(0));
        }
        stash = std::move(cur);
        return x;
    }

    // Full-sequence logits with the forward mode picked by the layer map:
    // plain single pass when every source sits at or below its reader,
    // otherwise the iterative scheme.
    Tensor<T> forward(const std::vector<std::int32_t>& tokens, int stopped_iterations,
                      int differentiable_iterations, StageCounters* sc = nullptr,
                      IterDiag* diag = nullptr) const {
        KVStash<T> stash;
        Tensor<T> acts;
        if (!topo.has_upward_dependency()) {
            acts = forward_single_pass(tokens, stash, sc);
        } else {
            acts = forward_iterative(tokens, stopped_iterations, differentiable_iterations, stash,
                                     sc, diag);
        }
        return logits_from(acts);
    }
};

} // namespace xlkv
