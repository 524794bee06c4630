#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "xlkv/config.hpp"
#include "xlkv/model.hpp"
#include "xlkv/topology.hpp"

namespace testutil {

// Small config for fast exact checks (vocab kept tiny on purpose).
inline xlkv::ModelConfig micro_config(int n_layers, int hidden = 16, int n_heads = 2,
                                      int n_kv_heads = 2, int vocab = 32) {
    xlkv::ModelConfig cfg;
    cfg.hidden = hidden;
    cfg.intermediate = hidden * 3;
    cfg.n_layers = n_layers;
    cfg.n_heads = n_heads;
    cfg.n_kv_heads = n_kv_heads;
    cfg.vocab_size = vocab;
    cfg.max_len = 64;
    cfg.validate();
    return cfg;
}

inline std::vector<std::int32_t> random_tokens(int n, int vocab, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<std::int32_t> out(static_cast<size_t>(n));
    for (auto& t : out) t = static_cast<std::int32_t>(rng() % static_cast<std::uint64_t>(vocab));
    return out;
}

template <typename T>
xlkv::Tensor<T> random_tensor(xlkv::Shape shape, std::uint64_t seed, double sd = 0.5) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, sd);
    xlkv::Tensor<T> t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] = static_cast<T>(dist(rng));
    return t;
}

inline double max_abs_diff(const double* a, const double* b, std::int64_t n) {
    double worst = 0.0;
    for (std::int64_t i = 0; i < n; ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

template <typename T>
double max_abs_diff_t(const xlkv::Tensor<T>& a, const xlkv::Tensor<T>& b) {
    double worst = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i)
        worst = std::max(worst, std::abs(static_cast<double>(a.data()[i]) -
                                         static_cast<double>(b.data()[i])));
    return worst;
}

// The nine named configurations: {pizza, sandwich, lasagna} x {bottom, top, middle}.
inline std::vector<std::pair<xlkv::Partitioning, xlkv::Positioning>> nine_configurations() {
    using P = xlkv::Partitioning;
    using Q = xlkv::Positioning;
    std::vector<std::pair<P, Q>> out;
    for (P p : {P::pizza, P::sandwich, P::lasagna})
        for (Q q : {Q::bottom, Q::top, Q::middle}) out.emplace_back(p, q);
    return out;
}

} // namespace testutil
