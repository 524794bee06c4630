#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <vector>

#include "xlkv/counters.hpp"
#include "xlkv/model.hpp"
#include "xlkv/optimizer.hpp"
#include "xlkv/schedule.hpp"
#include "xlkv/tape.hpp"

namespace xlkv {

struct TrainReport {
    std::int64_t step = 0; // 0-based step just taken
    double loss = 0.0;
    double lr = 0.0;
    double grad_norm = 0.0; // pre-clip global norm
    std::int64_t batch_tokens = 0;
    double seconds = 0.0;
    double tokens_per_sec = 0.0;
    StageCounters layer_counters; // train-stage work for this step
    IterDiag iter;                // from the last sequence of the step
};

// Owns the optimization state over a borrowed model. One train_step consumes
// a batch of token sequences: forward (single-pass or iterative per the
// layer map), mean next-token cross-entropy over all predicted positions,
// backward per sequence with gradient accumulation, global-norm clipping
// and one AdamW update at the scheduled learning rate.
template <typename T>
class Trainer {
public:
    Trainer(Model<T>& model, const TrainSchedule& sched)
        : model_(model),
          sched_(sched),
          opt_(sched.beta1, sched.beta2, sched.adam_eps, sched.weight_decay) {
        sched_.validate();
    }

    std::int64_t step() const { return step_; }
    const TrainSchedule& schedule() const { return sched_; }

    TrainReport train_step(const std::vector<std::vector<std::int32_t>>& sequences) {
        const auto t0 = std::chrono::steady_clock::now();
        if (sequences.empty()) throw train_error("train_step: empty batch");
        std::int64_t n_predicted = 0;
        std::int64_t n_tokens = 0;
        for (const auto& seq : sequences) {
            if (seq.size() < 2) {
                throw train_error("train_step: sequences need at least 2 tokens, got " +
                                  std::to_string(seq.size()));
            }
            n_predicted += static_cast<std::int64_t>(seq.size()) - 1;
            n_tokens += static_cast<std::int64_t>(seq.size());
        }

        auto params = model_.parameters();
        std::vector<std::vector<T>> grads(params.size());
        for (size_t p = 0; p < params.size(); ++p) {
            grads[p].assign(static_cast<size_t>(params[p]->numel()), T(0));
        }

        TrainReport report;
        report.layer_counters = StageCounters(model_.cfg.n_layers);
        double loss = 0.0;
        for (const auto& seq : sequences) {
            const auto n = static_cast<std::int64_t>(seq.size());
            const T weight = static_cast<T>(n - 1) / static_cast<T>(n_predicted);
            model_.untrack_all();
            tape_.reset();
            model_.watch_all(tape_);
            Tensor<T> logits =
                model_.forward(seq, sched_.m, sched_.b, &report.layer_counters, &report.iter);
            Tensor<T> pred = rows(logits, 0, n - 1);
            std::vector<std::int32_t> targets(seq.begin() + 1, seq.end());
            Tensor<T> ce = cross_entropy(pred, targets);
            // global mean over the batch = per-sequence means weighted by
            // predicted-position counts
            Tensor<T> contrib = scale(ce, weight);
            tape_.backward(contrib);
            loss += static_cast<double>(contrib.item());
            for (size_t p = 0; p < params.size(); ++p) {
                const auto g = tape_.grad(*params[p]);
                for (size_t i = 0; i < g.size(); ++i) grads[p][i] += g[i];
            }
        }
        model_.untrack_all();
        tape_.reset();

        if (!std::isfinite(loss)) {
            throw train_error("train_step: non-finite loss " + std::to_string(loss) + " at step " +
                              std::to_string(step_));
        }
        report.grad_norm = clip_global_norm(grads, sched_.grad_clip);
        report.lr = learning_rate(sched_, step_);
        opt_.step(params, grads, report.lr);

        const auto t1 = std::chrono::steady_clock::now();
        report.step = step_++;
        report.loss = loss;
        report.batch_tokens = n_tokens;
        report.seconds = std::chrono::duration<double>(t1 - t0).count();
        report.tokens_per_sec =
            report.seconds > 0.0 ? static_cast<double>(n_tokens) / report.seconds : 0.0;
        return report;
    }

private:
    Model<T>& model_;
    TrainSchedule sched_;
    AdamW<T> opt_;
    Tape<T> tape_;
    std::int64_t step_ = 0;
};

// Evaluation-style loss (no gradients, no update): mean next-token
// cross-entropy of the model over the given sequences.
template <typename T>
double eval_loss(const Model<T>& model, const std::vector<std::vector<std::int32_t>>& sequences,
                 int m, int b) {
    std::int64_t n_predicted = 0;
    for (const auto& seq : sequences) {
        if (seq.size() < 2) throw data_error("eval_loss: sequences need at least 2 tokens");
        n_predicted += static_cast<std::int64_t>(seq.size()) - 1;
    }
    double loss = 0.0;
    for (const auto& seq : sequences) {
        const auto n = static_cast<std::int64_t>(seq.size());
        Tensor<T> logits = model.forward(seq, m, b);
        Tensor<T> pred = rows(logits, 0, n - 1);
        std::vector<std::int32_t> targets(seq.begin() + 1, seq.end());
        const double ce = static_cast<double>(cross_entropy(pred, targets).item());
        loss += ce * static_cast<double>(n - 1) / static_cast<double>(n_predicted);
    }
    return loss;
}

} // namespace xlkv
