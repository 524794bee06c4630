#pragma once

#include <chrono>
#include <cstdint>
#include <utility>
#include <vector>

#include "xlkv/counters.hpp"
#include "xlkv/kv_cache.hpp"
#include "xlkv/model.hpp"
#include "xlkv/sampler.hpp"

namespace xlkv {

struct GenRequest {
    std::vector<std::int32_t> prompt;
    int max_new_tokens = 32;
    double temperature = 0.0; // 0 = greedy
    int top_k = 0;            // 0 = unrestricted
    std::uint64_t seed = 0;
    bool stop_on_eos = false;
    std::int32_t eos_id = -1;
};

struct GenResult {
    std::vector<std::int32_t> tokens; // generated tokens only
    RunCounters counters;
    double prefill_seconds = 0.0;
    double decode_seconds = 0.0;
};

// Stateful generation over one KV cache: prefill(prompt) once, then
// decode_step per generated token. All forwards run without gradient
// recording; iterative prompt encoding uses the configured iteration counts.
template <typename T>
class Engine {
public:
    Engine(Model<T> model, std::int64_t capacity, int stopped_iterations,
           int differentiable_iterations)
        : model_(std::move(model)),
          cache_(model_.topo, model_.cfg, capacity),
          counters_(model_.cfg.n_layers),
          m_(stopped_iterations),
          b_(differentiable_iterations) {
        if (m_ < 0 || b_ < 0 || m_ + b_ < 1) {
            throw config_error("engine: need at least one prompt-encoding iteration");
        }
        if (capacity > model_.cfg.max_len) {
            throw config_error("engine: cache capacity " + std::to_string(capacity) +
                               " exceeds maximum sequence length " +
                               std::to_string(model_.cfg.max_len));
        }
        model_.untrack_all();
    }

    const Model<T>& model() const { return model_; }
    const KVCache<T>& kv_cache() const { return cache_; }
    const RunCounters& counters() const { return counters_; }
    std::int64_t position() const { return pos_; }

    void reset() {
        cache_.reset();
        pos_ = 0;
        counters_ = RunCounters(model_.cfg.n_layers);
    }

    // Encodes the prompt, fills the cache for all its positions, and returns
    // the logits that condition the first generated token. Layers above the
    // last cache layer run on the final position only; maps with upward
    // dependencies encode the prompt with m + b full-sequence iterations.
    Tensor<T> prefill(const std::vector<std::int32_t>& prompt) {
        if (pos_ != 0) throw state_error("prefill: cache already holds a sequence; reset first");
        const auto x = static_cast<std::int64_t>(prompt.size());
        if (x > cache_.capacity()) {
            throw capacity_error("prefill: prompt of " + std::to_string(x) +
                                 " tokens exceeds cache capacity " +
                                 std::to_string(cache_.capacity()));
        }
        KVStash<T> stash;
        Tensor<T> acts;
        if (!model_.topo.has_upward_dependency()) {
            acts = model_.forward_single_pass(prompt, stash, &counters_.prefill, true);
        } else {
            acts = model_.forward_iterative(prompt, m_, b_, stash, &counters_.prefill, nullptr,
                                            true);
        }
        for (int j : model_.topo.kv_layers()) {
            cache_.write_rows(j, 0, stash[static_cast<size_t>(j)].k,
                              stash[static_cast<size_t>(j)].v);
            counters_.cache_writes += x;
        }
        cache_.advance(x);
        pos_ = x;
        if (acts.dim(0) > 1) acts = rows(acts, acts.dim(0) - 1, acts.dim(0));
        return model_.logits_from(acts);
    }

    // Runs one full-stack pass over a single token at the next position and
    // appends its K/V at every cache layer. Returns the logits row.
    Tensor<T> decode_step(std::int32_t token) {
        if (pos_ == 0) throw state_error("decode: cache is empty; prefill first");
        if (pos_ >= cache_.capacity()) {
            throw capacity_error("decode: position " + std::to_string(pos_) +
                                 " exceeds cache capacity " + std::to_string(cache_.capacity()));
        }
        if (pos_ >= model_.cfg.max_len) {
            throw capacity_error("decode: position " + std::to_string(pos_) +
                                 " exceeds maximum sequence length " +
                                 std::to_string(model_.cfg.max_len));
        }
        const auto& cfg = model_.cfg;
        const auto& topo = model_.topo;
        const bool upward = topo.has_upward_dependency();
        const T eps = static_cast<T>(cfg.norm_eps);
        const std::vector<std::int64_t> qpos{pos_};
        KVStash<T> pending(static_cast<size_t>(cfg.n_layers) + 1);
        Tensor<T> x = embedding(model_.tok_embed, std::vector<std::int32_t>{token});
        for (int i = 1; i <= cfg.n_layers; ++i) {
            const auto& lw = model_.layers[static_cast<size_t>(i - 1)];
            const int j = topo.target(i);
            Tensor<T> h = rms_norm(x, lw.attn_norm, eps);
            if (lw.has_kv) {
                auto& p = pending[static_cast<size_t>(i)];
                p.k = rope(matmul(h, lw.wk), cfg.head_dim, qpos, cfg.rope_base);
                p.v = matmul(h, lw.wv);
            }
            // past positions from the cache; without upward dependencies the
            // token also sees its own K/V, already computed at layer j <= i
            LayerKV<T> src = cache_.view(j, pos_);
            if (!upward && pending[static_cast<size_t>(j)].present()) {
                src.k = concat(std::vector<Tensor<T>>{src.k, pending[static_cast<size_t>(j)].k}, 0);
                src.v = concat(std::vector<Tensor<T>>{src.v, pending[static_cast<size_t>(j)].v}, 0);
            }
            Tensor<T> q = rope(matmul(h, lw.wq), cfg.head_dim, qpos, cfg.rope_base);
            Tensor<T> attn_out =
                attend(q, src.k, src.v, cfg.n_heads, cfg.n_kv_heads, cfg.head_dim, nullptr);
            x = add(x, matmul(attn_out, lw.wo));
            Tensor<T> h2 = rms_norm(x, lw.mlp_norm, eps);
            x = add(x, swiglu(h2, lw.w_gate, lw.w_up, lw.w_down));
            counters_.decode.record(i, 1);
        }
        for (int j : topo.kv_layers()) {
            cache_.write_rows(j, pos_, pending[static_cast<size_t>(j)].k,
                              pending[static_cast<size_t>(j)].v);
            counters_.cache_writes += 1;
        }
        cache_.advance(1);
        pos_ += 1;
        return model_.logits_from(x);
    }

    // prefill + max_new_tokens sampled continuations. Every generated token
    // is run through a decode pass (the cache stays complete), so decode
    // work is exactly max_new_tokens passes over the full stack.
    GenResult generate(const GenRequest& req) {
        if (req.max_new_tokens < 1) {
            throw config_error("generate: max_new_tokens must be >= 1");
        }
        reset();
        GenResult out;
        Sampler sampler(req.temperature, req.top_k, req.seed);
        const auto t0 = std::chrono::steady_clock::now();
        Tensor<T> logits = prefill(req.prompt);
        const auto t1 = std::chrono::steady_clock::now();
        std::int32_t next = sampler.sample(logits.data(), logits.dim(1));
        for (int t = 0; t < req.max_new_tokens; ++t) {
            out.tokens.push_back(next);
            logits = decode_step(next);
            if (req.stop_on_eos && next == req.eos_id) break;
            if (t + 1 < req.max_new_tokens) next = sampler.sample(logits.data(), logits.dim(1));
        }
        const auto t2 = std::chrono::steady_clock::now();
        out.prefill_seconds = std::chrono::duration<double>(t1 - t0).count();
        out.decode_seconds = std::chrono::duration<double>(t2 - t1).count();
        out.counters = counters_;
        return out;
    }

private:
    Model<T> model_;
    KVCache<T> cache_;
    RunCounters counters_;
    int m_ = 0;
    int b_ = 0;
    std::int64_t pos_ = 0;
};

} // namespace xlkv
