#pragma once

#include <cstdint>
#include <string>

namespace xlkv {

// Full training recipe: iteration counts for the iterative forward, AdamW
// hyperparameters, warmup-then-cosine learning-rate schedule and batch
// accounting. `total_steps` must be resolved (from epochs or token budget)
// before the schedule is used for a run.
struct TrainSchedule {
    int m = 7; // gradient-stopped iterations
    int b = 2; // differentiable iterations

    double max_lr = 0.0;
    double min_lr = 0.0;
    int warmup_steps = 0;      // takes precedence when > 0
    double warmup_ratio = 0.0; // otherwise ratio of total_steps

    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.0;
    double grad_clip = 0.0; // 0 = no clipping

    std::int64_t batch_tokens = 0;
    double epochs = 0.0;            // total as passes over the corpus
    std::int64_t token_budget = 0;  // total as tokens (overrides epochs when > 0)

    int total_steps = 0;

    void validate() const;
    // Warmup length in steps under the resolved total.
    int resolved_warmup() const;
};

// Learning rate at a 0-based step: linear warmup max_lr*(step+1)/warmup,
// then cosine from max_lr down to min_lr at step == total_steps.
double learning_rate(const TrainSchedule& s, std::int64_t step);

// Named recipes: "small-110M", "small-1.1B", "large-1.1B".
TrainSchedule hyperparameter_presets(const std::string& name);

// Steps implied by a corpus size under the schedule's epochs/token budget.
int resolve_total_steps(const TrainSchedule& s, std::int64_t corpus_tokens);

} // namespace xlkv
