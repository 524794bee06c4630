#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>
#include <vector>

#include "sequential_oracle.hpp"
#include "test_util.hpp"
#include "xlkv/errors.hpp"
#include "xlkv/optimizer.hpp"
#include "xlkv/schedule.hpp"
#include "xlkv/training.hpp"

using namespace xlkv;
using testutil::micro_config;

namespace {

Model<double> make_random(const ModelConfig& cfg, const KVTopology& topo, std::uint64_t seed) {
    auto m = Model<double>::make(cfg, topo);
    m.init_random(seed);
    return m;
}

TrainSchedule tiny_schedule(int total, double lr = 3e-3) {
    TrainSchedule s;
    s.m = 0;
    s.b = 1;
    s.max_lr = lr;
    s.min_lr = lr * 0.1;
    s.warmup_steps = 5;
    s.weight_decay = 0.01;
    s.grad_clip = 1.0;
    s.batch_tokens = 64;
    s.total_steps = total;
    return s;
}

} // namespace

TEST_CASE("learning rate schedule endpoints and shape") {
    TrainSchedule s;
    s.max_lr = 1e-3;
    s.min_lr = 1e-5;
    s.warmup_steps = 10;
    s.total_steps = 110;

    CHECK(learning_rate(s, 0) == doctest::Approx(1e-3 / 10.0));
    CHECK(learning_rate(s, 4) == doctest::Approx(1e-3 * 5 / 10.0));
    CHECK(learning_rate(s, 9) == doctest::Approx(1e-3)); // end of warmup
    CHECK(learning_rate(s, 10) == doctest::Approx(1e-3)); // cosine start
    // halfway through the cosine span: the arithmetic mean
    CHECK(learning_rate(s, 60) == doctest::Approx((1e-3 + 1e-5) / 2.0));
    CHECK(learning_rate(s, 110) == doctest::Approx(1e-5));
    CHECK(learning_rate(s, 500) == doctest::Approx(1e-5));
    // monotone decay after warmup
    for (int i = 10; i < 110; ++i) CHECK(learning_rate(s, i) >= learning_rate(s, i + 1));

    // ratio-based warmup
    TrainSchedule r = s;
    r.warmup_steps = 0;
    r.warmup_ratio = 0.1;
    CHECK(r.resolved_warmup() == 11);
}

TEST_CASE("schedule presets") {
    auto a = hyperparameter_presets("small-110M");
    CHECK(a.max_lr == 6.75e-4);
    CHECK(a.min_lr == 0.0);
    CHECK(a.beta1 == 0.9);
    CHECK(a.beta2 == 0.999);
    CHECK(a.warmup_ratio == 0.015);
    CHECK(a.weight_decay == 0.1);
    CHECK(a.grad_clip == 1.0);
    CHECK(a.batch_tokens == 32 * 1024);
    CHECK(a.epochs == 2.0);

    auto b = hyperparameter_presets("small-1.1B");
    CHECK(b.max_lr == 3e-4);
    CHECK(b.batch_tokens == 256 * 1024);
    CHECK(b.epochs == 1.0);

    auto c = hyperparameter_presets("large-1.1B");
    CHECK(c.max_lr == 4e-4);
    CHECK(c.min_lr == 4e-5);
    CHECK(c.beta2 == 0.95);
    CHECK(c.warmup_steps == 200);
    CHECK(c.batch_tokens == 2 * 1024 * 1024);
    CHECK(c.token_budget == 100000000000LL);

    CHECK_THROWS_AS(hyperparameter_presets("medium"), config_error);

    // step resolution: epochs scale the corpus, budget overrides epochs
    auto s = hyperparameter_presets("small-110M");
    CHECK(resolve_total_steps(s, 32 * 1024 * 10) == 20);
    CHECK(resolve_total_steps(s, 32 * 1024 * 10 + 1) == 21); // ceil
    s.token_budget = 32 * 1024 * 7;
    CHECK(resolve_total_steps(s, 32 * 1024 * 1000) == 7);
}

TEST_CASE("schedule validation") {
    auto ok = tiny_schedule(100);
    CHECK_NOTHROW(ok.validate());
    auto bad = ok;
    bad.b = 0;
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = ok;
    bad.m = -1;
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = ok;
    bad.max_lr = 0.0;
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = ok;
    bad.min_lr = bad.max_lr * 2;
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = ok;
    bad.total_steps = 0;
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = ok;
    bad.warmup_steps = 1000;
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = ok;
    bad.beta2 = 1.0;
    CHECK_THROWS_AS(bad.validate(), config_error);
}

TEST_CASE("global norm clipping") {
    std::vector<std::vector<double>> grads = {{3.0, 0.0}, {0.0, 4.0}}; // norm 5
    CHECK(clip_global_norm(grads, 1.0) == doctest::Approx(5.0));
    double after = 0.0;
    for (auto& g : grads)
        for (double v : g) after += v * v;
    CHECK(std::sqrt(after) == doctest::Approx(1.0));
    CHECK(std::sqrt(after) <= 1.0 + 1e-6);

    // under the limit: untouched
    std::vector<std::vector<double>> small = {{0.3, 0.4}};
    CHECK(clip_global_norm(small, 1.0) == doctest::Approx(0.5));
    CHECK(small[0][0] == 0.3);

    // max_norm 0 disables clipping
    std::vector<std::vector<double>> big = {{30.0, 40.0}};
    CHECK(clip_global_norm(big, 0.0) == doctest::Approx(50.0));
    CHECK(big[0][0] == 30.0);
}

TEST_CASE("adamw single step against hand computation") {
    Tensor<double> w = Tensor<double>::from({2}, {1.0, -2.0});
    std::vector<Tensor<double>*> params = {&w};
    std::vector<std::vector<double>> grads = {{0.5, -0.25}};
    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, wd = 0.1, lr = 1e-2;
    AdamW<double> opt(beta1, beta2, eps, wd);
    opt.step(params, grads, lr);
    CHECK(opt.steps_taken() == 1);

    for (int i = 0; i < 2; ++i) {
        const double g = grads[0][i];
        const double m = (1 - beta1) * g, v = (1 - beta2) * g * g;
        const double mhat = m / (1 - beta1), vhat = v / (1 - beta2);
        const double w0 = i == 0 ? 1.0 : -2.0;
        const double want = w0 - lr * (mhat / (std::sqrt(vhat) + eps) + wd * w0);
        CHECK(w.data()[i] == doctest::Approx(want).epsilon(1e-12));
    }

    // second step uses the accumulated moments
    auto w_before = w.data()[0];
    opt.step(params, grads, lr);
    CHECK(opt.steps_taken() == 2);
    CHECK(w.data()[0] != w_before);

    std::vector<std::vector<double>> wrong = {{1.0}};
    CHECK_THROWS_AS(opt.step(params, wrong, lr), shape_error);
    std::vector<std::vector<double>> missing;
    CHECK_THROWS_AS(opt.step(params, missing, lr), state_error);
}

TEST_CASE("train_step: loss drops by half on a memorizable stream") {
    auto cfg = micro_config(2, 16, 2, 2);
    auto topo = build_topology(Partitioning::pizza, Positioning::bottom, 2, 2); // identity
    auto model = make_random(cfg, topo, 41);
    Trainer<double> trainer(model, tiny_schedule(200));

    std::vector<std::vector<std::int32_t>> batch = {
        {1, 2, 3, 4, 5, 6, 7, 8},
        {9, 10, 11, 12, 13, 14, 15, 16},
    };
    double first = 0.0, last = 0.0;
    for (int s = 0; s < 200; ++s) {
        auto rep = trainer.train_step(batch);
        if (s == 0) {
            first = rep.loss;
            CHECK(rep.step == 0);
            CHECK(rep.batch_tokens == 16);
            CHECK(rep.lr == doctest::Approx(learning_rate(trainer.schedule(), 0)));
            // two sequences, one pass each over both layers
            CHECK(rep.layer_counters.passes[0] == 2);
            CHECK(rep.layer_counters.positions[0] == 16);
        }
        last = rep.loss;
        CHECK(std::isfinite(rep.loss));
        CHECK(rep.grad_norm >= 0.0);
    }
    CHECK(trainer.step() == 200);
    CHECK(last <= 0.5 * first);
}

TEST_CASE("train_step: iterative path also learns") {
    auto cfg = micro_config(3, 16, 2, 2);
    auto topo = build_topology(Partitioning::sandwich, Positioning::top, 3, 2); // [1,3,3]
    auto model = make_random(cfg, topo, 43);
    auto sched = tiny_schedule(80);
    sched.m = 2;
    sched.b = 1;
    Trainer<double> trainer(model, sched);

    std::vector<std::vector<std::int32_t>> batch = {{2, 4, 6, 8, 10, 12}};
    double first = 0.0, last = 0.0;
    for (int s = 0; s < 80; ++s) {
        auto rep = trainer.train_step(batch);
        if (s == 0) {
            first = rep.loss;
            // gradient-stopped iterations left no nodes on the tape
            CHECK(rep.iter.stopped_iterations == 2);
            CHECK(rep.iter.differentiable_iterations == 1);
            CHECK(rep.iter.nodes_after_stopped_iters == rep.iter.nodes_at_iter_start);
            // in-range layers ran m+b times per sequence
            CHECK(rep.layer_counters.passes[1] == 3);
            CHECK(rep.layer_counters.passes[0] == 1);
        }
        last = rep.loss;
    }
    CHECK(last <= 0.8 * first);
}

TEST_CASE("train_step loss equals the sequential oracle at m=0, b=n") {
    auto cfg = micro_config(3, 16, 4, 2);
    auto topo = build_topology(Partitioning::sandwich, Positioning::top, 3, 2);
    auto model = make_random(cfg, topo, 47);
    const std::vector<std::int32_t> seq = {3, 1, 4, 1};

    auto oracle_out = oracle::sequential_forward(model, seq);
    const double want = oracle::sequential_mean_nll(oracle_out, seq, cfg.vocab_size);

    auto sched = tiny_schedule(10);
    sched.m = 0;
    sched.b = static_cast<int>(seq.size());
    Trainer<double> trainer(model, sched);
    auto rep = trainer.train_step({seq});
    CHECK(std::abs(rep.loss - want) <= 1e-5);
}

TEST_CASE("eval_loss matches the step loss and weights by predictions") {
    auto cfg = micro_config(2, 16, 2, 2);
    auto topo = build_topology(Partitioning::pizza, Positioning::bottom, 2, 1);
    auto model = make_random(cfg, topo, 53);
    std::vector<std::vector<std::int32_t>> batch = {{1, 2, 3}, {4, 5, 6, 7, 8}};

    const double ev = eval_loss(model, batch, 0, 1);
    // manual weighted mean over 2 + 4 predicted positions
    double manual = 0.0;
    for (const auto& seq : batch) {
        const auto n = static_cast<std::int64_t>(seq.size());
        auto logits = model.forward(seq, 0, 1);
        std::vector<std::int32_t> targets(seq.begin() + 1, seq.end());
        manual += cross_entropy(rows(logits, 0, n - 1), targets).item() *
                  static_cast<double>(n - 1) / 6.0;
    }
    CHECK(ev == doctest::Approx(manual).epsilon(1e-12));

    Trainer<double> trainer(model, tiny_schedule(10));
    auto rep = trainer.train_step(batch);
    CHECK(rep.loss == doctest::Approx(ev).epsilon(1e-12)); // loss is pre-update

    CHECK_THROWS_AS(eval_loss(model, {{1}}, 0, 1), data_error);
}

TEST_CASE("training is bitwise deterministic") {
    auto cfg = micro_config(3, 16, 2, 2);
    auto topo = build_topology(Partitioning::lasagna, Positioning::top, 3, 3);
    std::vector<std::vector<std::int32_t>> batch = {{5, 6, 7, 8}, {9, 8, 7, 6, 5}};

    auto run = [&](std::uint64_t seed) {
        auto model = make_random(cfg, topo, seed);
        Trainer<double> trainer(model, tiny_schedule(20));
        std::vector<double> losses;
        for (int s = 0; s < 5; ++s) losses.push_back(trainer.train_step(batch).loss);
        std::vector<double> flat;
        for (auto* t : model.parameters())
            flat.insert(flat.end(), t->data(), t->data() + t->numel());
        return std::make_pair(losses, flat);
    };
    auto [la, wa] = run(7);
    auto [lb, wb] = run(7);
    CHECK(la == lb);
    CHECK(wa == wb);
    auto [lc, wc] = run(8);
    CHECK(la != lc);
}

TEST_CASE("train_step error handling") {
    auto cfg = micro_config(2, 16, 2, 2);
    auto topo = build_topology(Partitioning::pizza, Positioning::bottom, 2, 2);
    auto model = make_random(cfg, topo, 59);
    Trainer<double> trainer(model, tiny_schedule(10));

    CHECK_THROWS_AS(trainer.train_step({}), train_error);
    CHECK_THROWS_AS(trainer.train_step({{7}}), train_error);

    // poisoned weights surface as a training error before any update
    model.tok_embed.data()[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(trainer.train_step({{0, 0, 0}}), train_error);
}
