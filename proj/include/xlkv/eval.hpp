#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "xlkv/model.hpp"

namespace xlkv {

struct PplResult {
    double perplexity = 0.0;
    double mean_nll = 0.0;
    std::int64_t scored_positions = 0;
    std::int64_t windows = 0;
};

// Windowed perplexity: exp(mean next-token NLL over all scored positions).
// Windows start at 0, stride, 2*stride, ...; the first window scores every
// prediction it contains, later windows only their last min(stride,
// window-1) predictions (the rest is overlap context). stride == window
// gives non-overlapping windows.
template <typename T>
PplResult eval_perplexity(const Model<T>& model, const std::vector<std::int32_t>& stream,
                          int window, int stride, int m, int b) {
    if (static_cast<std::int64_t>(stream.size()) < 2) {
        throw data_error("perplexity: stream of " + std::to_string(stream.size()) +
                         " tokens is too short (need at least 2)");
    }
    if (window < 2 || window > model.cfg.max_len) {
        throw config_error("perplexity: window must lie in [2, max_len], got " +
                           std::to_string(window));
    }
    if (stride < 1 || stride > window) {
        throw config_error("perplexity: stride must lie in [1, window], got " +
                           std::to_string(stride));
    }
    const auto n = static_cast<std::int64_t>(stream.size());
    double nll_sum = 0.0;
    PplResult res;
    for (std::int64_t s = 0; s < n - 1; s += stride) {
        const std::int64_t end = std::min<std::int64_t>(s + window, n);
        const std::int64_t len = end - s;
        if (len < 2) break;
        const std::vector<std::int32_t> seq(stream.begin() + s, stream.begin() + end);
        Tensor<T> logits = model.forward(seq, m, b);
        const std::int64_t preds = len - 1;
        const std::int64_t score = s == 0 ? preds : std::min<std::int64_t>(stride, preds);
        Tensor<T> pred_rows = rows(logits, preds - score, preds);
        const std::vector<std::int32_t> targets(seq.begin() + (preds - score) + 1, seq.end());
        const double ce = static_cast<double>(cross_entropy(pred_rows, targets).item());
        nll_sum += ce * static_cast<double>(score);
        res.scored_positions += score;
        res.windows += 1;
        if (end == n) break;
    }
    res.mean_nll = nll_sum / static_cast<double>(res.scored_positions);
    res.perplexity = std::exp(res.mean_nll);
    return res;
}

} // namespace xlkv
