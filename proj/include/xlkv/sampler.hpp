#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "xlkv/errors.hpp"

namespace xlkv {

// Next-token sampling over one logits row. temperature == 0 is greedy
// (argmax, lowest id on ties); otherwise softmax at the given temperature,
// optionally restricted to the top_k highest logits (0 = unrestricted).
class Sampler {
public:
    Sampler(double temperature, int top_k, std::uint64_t seed)
        : temperature_(temperature), top_k_(top_k), rng_(seed) {
        if (temperature_ < 0.0) throw config_error("sampler: temperature must be >= 0");
        if (top_k_ < 0) throw config_error("sampler: top_k must be >= 0");
    }

    template <typename T>
    std::int32_t sample(const T* logits, std::int64_t vocab) {
        if (vocab <= 0) throw shape_error("sampler: empty logits row");
        if (temperature_ == 0.0) {
            std::int64_t best = 0;
            for (std::int64_t i = 1; i < vocab; ++i) {
                if (logits[i] > logits[best]) best = i;
            }
            return static_cast<std::int32_t>(best);
        }
        std::vector<std::int64_t> ids(static_cast<size_t>(vocab));
        for (std::int64_t i = 0; i < vocab; ++i) ids[static_cast<size_t>(i)] = i;
        if (top_k_ > 0 && top_k_ < vocab) {
            std::stable_sort(ids.begin(), ids.end(), [&](std::int64_t a, std::int64_t b) {
                return logits[a] > logits[b];
            });
            ids.resize(static_cast<size_t>(top_k_));
        }
        double mx = -std::numeric_limits<double>::infinity();
        for (auto i : ids) mx = std::max(mx, static_cast<double>(logits[i]) / temperature_);
        std::vector<double> cum(ids.size());
        double total = 0.0;
        for (size_t n = 0; n < ids.size(); ++n) {
            total += std::exp(static_cast<double>(logits[ids[n]]) / temperature_ - mx);
            cum[n] = total;
        }
        const double r = std::uniform_real_distribution<double>(0.0, total)(rng_);
        const auto it = std::lower_bound(cum.begin(), cum.end(), r);
        const size_t pick = std::min(static_cast<size_t>(it - cum.begin()), ids.size() - 1);
        return static_cast<std::int32_t>(ids[pick]);
    }

private:
    double temperature_;
    int top_k_;
    std::mt19937_64 rng_;
};

} // namespace xlkv
