#include "xlkv/schedule.hpp"

#include <cmath>

#include "xlkv/errors.hpp"

namespace xlkv {

void TrainSchedule::validate() const {
    if (b < 1) throw config_error("schedule: b must be >= 1, got " + std::to_string(b));
    if (m < 0) throw config_error("schedule: m must be >= 0, got " + std::to_string(m));
    if (max_lr <= 0.0) throw config_error("schedule: max_lr must be positive");
    if (min_lr < 0.0 || min_lr > max_lr) {
        throw config_error("schedule: min_lr must lie in [0, max_lr]");
    }
    if (total_steps < 1) throw config_error("schedule: total_steps must be resolved and >= 1");
    if (warmup_steps < 0 || warmup_ratio < 0.0 || warmup_ratio > 1.0) {
        throw config_error("schedule: invalid warmup");
    }
    if (resolved_warmup() > total_steps) {
        throw config_error("schedule: warmup of " + std::to_string(resolved_warmup()) +
                           " steps exceeds total of " + std::to_string(total_steps));
    }
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0 || adam_eps <= 0.0) {
        throw config_error("schedule: invalid AdamW parameters");
    }
    if (weight_decay < 0.0 || grad_clip < 0.0) {
        throw config_error("schedule: weight_decay and grad_clip must be >= 0");
    }
}

int TrainSchedule::resolved_warmup() const {
    if (warmup_steps > 0) return warmup_steps;
    return static_cast<int>(warmup_ratio * total_steps);
}

double learning_rate(const TrainSchedule& s, std::int64_t step) {
    const int warmup = s.resolved_warmup();
    if (step < warmup) {
        return s.max_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
    }
    if (step >= s.total_steps) return s.min_lr;
    const double span = static_cast<double>(s.total_steps - warmup);
    const double t = span > 0.0 ? static_cast<double>(step - warmup) / span : 1.0;
    return s.min_lr + 0.5 * (s.max_lr - s.min_lr) * (1.0 + std::cos(t * 3.14159265358979323846));
}

TrainSchedule hyperparameter_presets(const std::string& name) {
    TrainSchedule s;
    s.weight_decay = 0.1;
    s.grad_clip = 1.0;
    if (name == "small-110M") {
        s.max_lr = 6.75e-4;
        s.min_lr = 0.0;
        s.warmup_ratio = 0.015;
        s.batch_tokens = 32 * 1024;
        s.epochs = 2.0;
    } else if (name == "small-1.1B") {
        s.max_lr = 3e-4;
        s.min_lr = 0.0;
        s.warmup_ratio = 0.015;
        s.batch_tokens = 256 * 1024;
        s.epochs = 1.0;
    } else if (name == "large-1.1B") {
        s.max_lr = 4e-4;
        s.min_lr = 4e-5;
        s.beta2 = 0.95;
        s.warmup_steps = 200;
        s.batch_tokens = 2 * 1024 * 1024;
        s.token_budget = 100000000000LL;
    } else {
        throw config_error("unknown schedule preset '" + name +
                           "' (expected small-110M, small-1.1B or large-1.1B)");
    }
    return s;
}

int resolve_total_steps(const TrainSchedule& s, std::int64_t corpus_tokens) {
    if (s.batch_tokens < 1) throw config_error("schedule: batch_tokens must be positive");
    std::int64_t tokens = s.token_budget;
    if (tokens <= 0) {
        if (s.epochs <= 0.0) throw config_error("schedule: neither epochs nor token budget set");
        tokens = static_cast<std::int64_t>(s.epochs * static_cast<double>(corpus_tokens));
    }
    const std::int64_t steps = (tokens + s.batch_tokens - 1) / s.batch_tokens;
    if (steps < 1) throw config_error("schedule: corpus too small for one step");
    if (steps > 1000000000LL) throw config_error("schedule: resolved step count overflows");
    return static_cast<int>(steps);
}

} // namespace xlkv
