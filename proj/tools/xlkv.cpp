// xlkv: command-line front end for the cross-layer KV-sharing engine.
// Subcommands: plan, train, eval-ppl, generate, bench, convert. Every engine
// error exits nonzero with a single stderr line "error: <kind>: <message>".

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "xlkv/checkpoint.hpp"
#include "xlkv/errors.hpp"
#include "xlkv/eval.hpp"
#include "xlkv/inference.hpp"
#include "xlkv/schedule.hpp"
#include "xlkv/tokenizer.hpp"
#include "xlkv/training.hpp"

namespace {

using namespace xlkv;

struct topo_args {
    std::string partitioning;
    std::string positioning;
    int kv_layers = 0;
};

void add_topology_flags(CLI::App* cmd, topo_args& t) {
    cmd->add_option("--partitioning", t.partitioning, "layer grouping: pizza|sandwich|lasagna")
        ->required();
    cmd->add_option("--positioning", t.positioning,
                    "cache placement in the shared range: bottom|top|middle|middle-1/4|middle-3/4")
        ->required();
    cmd->add_option("--kv-layers", t.kv_layers, "number of layers that keep a KV cache")
        ->required();
}

KVTopology topo_from(const topo_args& t, int n_layers) {
    return build_topology(partitioning_from_string(t.partitioning),
                          positioning_from_string(t.positioning), n_layers, t.kv_layers);
}

struct corpus_args {
    std::string text_path;
    std::string token_path;
    int token_width = 16;
};

void add_corpus_flags(CLI::App* cmd, corpus_args& c) {
    cmd->add_option("--corpus", c.text_path, "raw text corpus (byte tokenizer)");
    cmd->add_option("--tokens", c.token_path, "pretokenized little-endian binary token file");
    cmd->add_option("--token-width", c.token_width, "token width in bits for --tokens: 16|32");
}

std::vector<std::int32_t> load_corpus(const corpus_args& c, std::int32_t vocab_limit) {
    if (!c.text_path.empty() && !c.token_path.empty())
        throw config_error("pass either --corpus or --tokens, not both");
    if (!c.text_path.empty()) return load_text_corpus(c.text_path);
    if (!c.token_path.empty()) return load_pretokenized(c.token_path, c.token_width, vocab_limit);
    throw config_error("a corpus is required: --corpus <text file> or --tokens <binary file>");
}

std::string format_map(const std::vector<int>& kv_map) {
    std::string s = "[";
    for (size_t i = 0; i < kv_map.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(kv_map[i]);
    }
    return s + "]";
}

std::string fmt_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<std::int32_t> parse_id_list(const std::string& s) {
    std::vector<std::int32_t> out;
    size_t start = 0;
    while (start < s.size()) {
        size_t end = s.find(',', start);
        if (end == std::string::npos) end = s.size();
        const std::string item = s.substr(start, end - start);
        try {
            size_t used = 0;
            const int v = std::stoi(item, &used);
            if (used != item.size()) throw std::invalid_argument(item);
            out.push_back(v);
        } catch (const std::exception&) {
            throw config_error("bad token id '" + item + "' in list '" + s + "'");
        }
        start = end + 1;
    }
    return out;
}

// "5+16,64+16" -> {(5,16),(64,16)}: x prompt tokens, y generated tokens
std::vector<std::pair<int, int>> parse_pairs(const std::string& s) {
    std::vector<std::pair<int, int>> out;
    size_t start = 0;
    while (start < s.size()) {
        size_t end = s.find(',', start);
        if (end == std::string::npos) end = s.size();
        const std::string item = s.substr(start, end - start);
        const auto plus = item.find('+');
        if (plus == std::string::npos || plus == 0 || plus + 1 == item.size())
            throw config_error("bad pair '" + item + "', expected <x>+<y> like 5+16");
        try {
            out.emplace_back(std::stoi(item.substr(0, plus)), std::stoi(item.substr(plus + 1)));
        } catch (const std::exception&) {
            throw config_error("bad pair '" + item + "', expected <x>+<y> like 5+16");
        }
        start = end + 1;
    }
    if (out.empty()) throw config_error("empty pair list");
    return out;
}

// ---------------------------------------------------------------- plan

int run_plan(const topo_args& targs, int layers, const std::string& preset,
             std::int64_t seq_len, int bytes_per_scalar) {
    ModelConfig cfg = model_preset(preset);
    cfg.n_layers = layers;
    cfg.validate();
    if (seq_len <= 0) seq_len = cfg.max_len;
    const KVTopology topo = topo_from(targs, layers);

    std::printf("partitioning %s\n", to_string(topo.partitioning()).c_str());
    std::printf("positioning %s\n", to_string(topo.positioning()).c_str());
    std::printf("layers %d\n", topo.num_layers());
    std::printf("kv_layers %d\n", topo.num_kv_layers());
    std::printf("kv_map %s\n", format_map(topo.kv_map()).c_str());
    if (topo.iter_range()) {
        std::printf("iter_range [%d,%d]\n", topo.iter_range()->first, topo.iter_range()->last);
    } else {
        std::printf("iter_range none\n");
    }
    std::printf("upward_dependency %s\n", topo.has_upward_dependency() ? "yes" : "no");
    for (const auto& w : topo.warnings()) std::printf("warning %s\n", w.c_str());

    const CacheBudget budget = cache_budget(topo, cfg, seq_len, bytes_per_scalar);
    // closed form so the 1.1B preset never gets materialized
    const std::int64_t h = cfg.hidden, v = cfg.vocab_size, q = cfg.q_dim(),
                       inter = cfg.intermediate;
    const std::int64_t params = v * h + h + (cfg.tie_embeddings ? 0 : v * h) +
                                cfg.n_layers * (2 * h + 2 * h * q + 3 * h * inter) +
                                budget.kv_param_count;
    std::printf("preset %s (hidden %d, heads %d, kv_heads %d, head_dim %d, vocab %d)\n",
                preset.c_str(), cfg.hidden, cfg.n_heads, cfg.n_kv_heads, cfg.head_dim,
                cfg.vocab_size);
    std::printf("parameters_total %" PRId64 "\n", params);
    std::printf("kv_parameters %" PRId64 "\n", budget.kv_param_count);
    std::printf("kv_parameter_savings_vs_standard %" PRId64 "\n",
                budget.kv_param_savings_vs_standard);
    std::printf("cache_bytes_per_token %" PRId64 "\n", budget.cache_bytes_per_token);
    std::printf("cache_bytes_total %" PRId64 " (seq_len %" PRId64 ", %d bytes/scalar)\n",
                budget.cache_bytes_total, budget.seq_len, bytes_per_scalar);
    return 0;
}

// ---------------------------------------------------------------- train

// Chop the stream into fixed-length chunks, shuffle per epoch, and pack
// batches up to batch_tokens (at least one sequence each).
struct batcher {
    batcher(std::vector<std::int32_t> stream, int seq_len, std::uint64_t seed)
        : stream_(std::move(stream)), seq_len_(seq_len), rng_(seed) {
        const auto n = static_cast<std::int64_t>(stream_.size());
        for (std::int64_t s = 0; s + 2 <= n; s += seq_len_)
            starts_.push_back(s);
        if (starts_.empty()) throw data_error("corpus too short: need at least 2 tokens");
        reshuffle();
    }

    std::vector<std::vector<std::int32_t>> next(std::int64_t batch_tokens) {
        std::vector<std::vector<std::int32_t>> batch;
        std::int64_t got = 0;
        while (got < batch_tokens) {
            if (cursor_ == starts_.size()) reshuffle();
            const std::int64_t s = starts_[cursor_++];
            const std::int64_t e =
                std::min<std::int64_t>(s + seq_len_, static_cast<std::int64_t>(stream_.size()));
            batch.emplace_back(stream_.begin() + s, stream_.begin() + e);
            got += e - s;
        }
        return batch;
    }

private:
    void reshuffle() {
        std::shuffle(starts_.begin(), starts_.end(), rng_);
        cursor_ = 0;
    }
    std::vector<std::int32_t> stream_;
    std::int64_t seq_len_;
    std::vector<std::int64_t> starts_;
    size_t cursor_ = 0;
    std::mt19937_64 rng_;
};

struct train_args {
    topo_args topo;
    corpus_args corpus;
    std::string preset = "tiny";
    std::string hyper;
    std::string out_dir = ".";
    std::uint64_t seed = 0;
    int seq_len = 0;
    int steps = 0;
    int log_every = 1;
    TrainSchedule sched; // explicit-flag overlay
    bool has_batch_tokens = false;
};

int run_train(const train_args& a) {
    ModelConfig cfg = model_preset(a.preset);
    const KVTopology topo = topo_from(a.topo, cfg.n_layers);

    TrainSchedule sched = a.hyper.empty() ? TrainSchedule{} : hyperparameter_presets(a.hyper);
    // explicit flags win over the preset
    if (a.sched.max_lr > 0) sched.max_lr = a.sched.max_lr;
    if (a.sched.min_lr >= 0) sched.min_lr = a.sched.min_lr;
    if (a.sched.warmup_steps > 0) sched.warmup_steps = a.sched.warmup_steps;
    if (a.sched.warmup_ratio > 0) sched.warmup_ratio = a.sched.warmup_ratio;
    if (a.sched.weight_decay >= 0) sched.weight_decay = a.sched.weight_decay;
    if (a.sched.grad_clip >= 0) sched.grad_clip = a.sched.grad_clip;
    if (a.has_batch_tokens) sched.batch_tokens = a.sched.batch_tokens;
    if (a.sched.epochs > 0) sched.epochs = a.sched.epochs;
    if (a.sched.token_budget > 0) sched.token_budget = a.sched.token_budget;
    sched.m = a.sched.m;
    sched.b = a.sched.b;
    if (sched.max_lr <= 0) sched.max_lr = 3e-3;
    if (sched.batch_tokens <= 0) sched.batch_tokens = 2048;

    const auto stream = load_corpus(a.corpus, cfg.vocab_size);
    sched.total_steps = a.steps > 0
                            ? a.steps
                            : resolve_total_steps(sched, static_cast<std::int64_t>(stream.size()));
    sched.validate();

    const int seq_len = a.seq_len > 0 ? a.seq_len : std::min(cfg.max_len, 256);
    if (seq_len < 2 || seq_len > cfg.max_len)
        throw config_error("--seq-len must lie in [2, max_len], got " + std::to_string(seq_len));

    auto model = Model<float>::make(cfg, topo);
    model.init_random(a.seed);
    Trainer<float> trainer(model, sched);
    batcher batches(stream, seq_len, a.seed ^ 0x9e3779b97f4a7c15ull);

    std::filesystem::create_directories(a.out_dir);
    const std::string csv_path = a.out_dir + "/metrics.csv";
    std::ofstream csv(csv_path, std::ios::trunc);
    if (!csv) throw io_error("cannot write metrics file '" + csv_path + "'");
    csv << "step,loss,lr,tokens_per_sec\n";

    std::printf("training %s %s/%s l=%d: %d steps, batch %" PRId64 " tokens, m=%d b=%d, seed %" PRIu64 "\n",
                a.preset.c_str(), a.topo.partitioning.c_str(), a.topo.positioning.c_str(),
                a.topo.kv_layers, sched.total_steps, sched.batch_tokens, sched.m, sched.b,
                a.seed);
    for (int s = 0; s < sched.total_steps; ++s) {
        const auto rep = trainer.train_step(batches.next(sched.batch_tokens));
        csv << rep.step << "," << fmt_g(rep.loss) << "," << fmt_g(rep.lr) << ","
            << fmt_g(rep.tokens_per_sec) << "\n";
        if (a.log_every > 0 && (s % a.log_every == 0 || s + 1 == sched.total_steps)) {
            std::printf("step %" PRId64 " loss %.6f lr %.3e tok/s %.0f\n", rep.step, rep.loss,
                        rep.lr, rep.tokens_per_sec);
        }
    }
    csv.close();

    const std::string ckpt_path = a.out_dir + "/model.ckpt";
    save_checkpoint(ckpt_path, model, sched.total_steps);
    std::printf("wrote %s\n", ckpt_path.c_str());
    std::printf("wrote %s\n", csv_path.c_str());
    return 0;
}

// ---------------------------------------------------------------- eval-ppl

int run_eval_ppl(const std::string& ckpt, const corpus_args& corpus, int window, int stride,
                 int m, int b) {
    auto model = load_checkpoint<float>(ckpt);
    const auto stream = load_corpus(corpus, model.cfg.vocab_size);
    if (window <= 0) window = std::min(model.cfg.max_len, 256);
    if (stride <= 0) stride = window; // non-overlapping by default
    const auto res = eval_perplexity(model, stream, window, stride, m, b);
    std::printf("perplexity %s\n", fmt_g(res.perplexity).c_str());
    std::printf("mean_nll %s\n", fmt_g(res.mean_nll).c_str());
    std::printf("scored_positions %" PRId64 "\n", res.scored_positions);
    std::printf("windows %" PRId64 "\n", res.windows);
    return 0;
}

// ---------------------------------------------------------------- generate

struct gen_args {
    std::string ckpt;
    std::string prompt;
    std::string prompt_ids;
    int max_new = 32;
    double temperature = 0.0;
    int top_k = 0;
    std::uint64_t seed = 0;
    int m = 7, b = 2; // prompt-encoding iterations, defaulting to the training split
    bool bos = false;
    bool stop_on_eos = false;
};

int run_generate(const gen_args& a) {
    auto model = load_checkpoint<float>(a.ckpt);
    const int vocab = model.cfg.vocab_size;

    if (!a.prompt.empty() && !a.prompt_ids.empty())
        throw config_error("pass either --prompt or --prompt-ids, not both");
    std::vector<std::int32_t> prompt;
    if (!a.prompt_ids.empty()) {
        prompt = parse_id_list(a.prompt_ids);
    } else {
        if (vocab < ByteTokenizer::vocab_size && a.prompt.empty())
            throw config_error("model vocabulary is smaller than the byte tokenizer; use --prompt-ids");
        prompt = ByteTokenizer{}.encode(a.prompt, a.bos);
        if (prompt.empty()) throw config_error("empty prompt: pass --prompt, --bos, or --prompt-ids");
    }
    for (size_t i = 0; i < prompt.size(); ++i) {
        if (prompt[i] < 0 || prompt[i] >= vocab)
            throw data_error("prompt token " + std::to_string(prompt[i]) + " at offset " +
                             std::to_string(i) + " is outside vocabulary of " +
                             std::to_string(vocab));
    }

    const auto capacity = static_cast<std::int64_t>(prompt.size()) + a.max_new;
    Engine<float> engine(std::move(model), capacity, a.m, a.b);

    GenRequest req;
    req.prompt = prompt;
    req.max_new_tokens = a.max_new;
    req.temperature = a.temperature;
    req.top_k = a.top_k;
    req.seed = a.seed;
    req.stop_on_eos = a.stop_on_eos;
    req.eos_id = ByteTokenizer::eos_id < vocab ? ByteTokenizer::eos_id : -1;
    const auto out = engine.generate(req);

    std::printf("tokens");
    for (auto t : out.tokens) std::printf(" %d", t);
    std::printf("\n");
    if (vocab == ByteTokenizer::vocab_size) {
        std::printf("text %s\n", ByteTokenizer{}.decode(out.tokens).c_str());
    }
    std::printf("prefill_seconds %s\n", fmt_g(out.prefill_seconds).c_str());
    std::printf("decode_seconds %s\n", fmt_g(out.decode_seconds).c_str());
    const double dps = out.decode_seconds > 0
                           ? static_cast<double>(out.tokens.size() - 1) / out.decode_seconds
                           : 0.0;
    std::printf("decode_tokens_per_sec %s\n", fmt_g(dps).c_str());
    std::printf("cache_writes %" PRId64 "\n", engine.counters().cache_writes);
    return 0;
}

// ---------------------------------------------------------------- bench

// One row per (pair, repetition):
//   pair,x,y,rep,prefill_seconds,decode_seconds,decode_tokens_per_sec,
//   prefill_passes,prefill_positions,decode_passes,decode_positions,
//   cache_writes,cache_bytes
int run_bench(const std::string& ckpt, const std::string& pairs_str, int reps, int m, int b,
              std::uint64_t seed, const std::string& csv_path) {
    if (reps < 1) throw config_error("repetitions must be at least 1, got " + std::to_string(reps));
    const auto pairs = parse_pairs(pairs_str);
    auto model = load_checkpoint<float>(ckpt);
    const int vocab = model.cfg.vocab_size;

    std::FILE* out = stdout;
    if (!csv_path.empty() && csv_path != "-") {
        out = std::fopen(csv_path.c_str(), "w");
        if (!out) throw io_error("cannot write bench file '" + csv_path + "'");
    }
    std::fprintf(out, "pair,x,y,rep,prefill_seconds,decode_seconds,decode_tokens_per_sec,"
                      "prefill_passes,prefill_positions,decode_passes,decode_positions,"
                      "cache_writes,cache_bytes\n");

    for (const auto& [x, y] : pairs) {
        if (x < 1 || y < 1)
            throw config_error("bench pair " + std::to_string(x) + "+" + std::to_string(y) +
                               ": both sides must be at least 1");
        for (int rep = 0; rep < reps; ++rep) {
            std::mt19937_64 rng(seed + static_cast<std::uint64_t>(rep));
            std::uniform_int_distribution<std::int32_t> pick(0, vocab - 1);
            GenRequest req;
            req.prompt.resize(static_cast<size_t>(x));
            for (auto& t : req.prompt) t = pick(rng);
            req.max_new_tokens = y;
            req.temperature = 0.0;

            Engine<float> engine(model, static_cast<std::int64_t>(x) + y, m, b);
            const auto res = engine.generate(req);
            const auto& c = engine.counters();
            const double dps =
                res.decode_seconds > 0 ? static_cast<double>(y) / res.decode_seconds : 0.0;
            std::fprintf(out, "%d+%d,%d,%d,%d,%s,%s,%s,%" PRId64 ",%" PRId64 ",%" PRId64
                              ",%" PRId64 ",%" PRId64 ",%" PRId64 "\n",
                         x, y, x, y, rep, fmt_g(res.prefill_seconds).c_str(),
                         fmt_g(res.decode_seconds).c_str(), fmt_g(dps).c_str(),
                         c.prefill.total_passes(), c.prefill.total_positions(),
                         c.decode.total_passes(), c.decode.total_positions(), c.cache_writes,
                         engine.kv_cache().allocated_bytes());
        }
    }
    if (out != stdout) std::fclose(out);
    return 0;
}

// ---------------------------------------------------------------- convert

int run_convert(const std::string& in_path, const std::string& out_path, const topo_args& targs) {
    std::int64_t step = 0;
    auto src = load_checkpoint<float>(in_path, &step);
    const KVTopology topo = topo_from(targs, src.cfg.n_layers);
    auto dst = convert_model(src, topo);
    save_checkpoint(out_path, dst, step);
    std::printf("kv_map %s\n", format_map(topo.kv_map()).c_str());
    std::printf("kv_layers %d of %d\n", topo.num_kv_layers(), topo.num_layers());
    std::printf("wrote %s\n", out_path.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"cross-layer KV sharing engine"};
    app.require_subcommand(1);

    // plan
    topo_args plan_topo;
    int plan_layers = 12;
    std::string plan_preset = "110M";
    std::int64_t plan_seq_len = 0;
    int plan_bytes = 2;
    auto* plan = app.add_subcommand("plan", "print the layer map and cache/parameter budget");
    add_topology_flags(plan, plan_topo);
    plan->add_option("--layers", plan_layers, "total transformer layers");
    plan->add_option("--preset", plan_preset, "model preset for the budget: tiny|110M|1.1B");
    plan->add_option("--seq-len", plan_seq_len, "sequence length for the cache total");
    plan->add_option("--bytes-per-scalar", plan_bytes, "cache element width in bytes");

    // train
    train_args ta;
    ta.sched.max_lr = 0;
    ta.sched.min_lr = -1;
    ta.sched.warmup_steps = 0;
    ta.sched.warmup_ratio = 0;
    ta.sched.weight_decay = -1;
    ta.sched.grad_clip = -1;
    ta.sched.epochs = 0;
    ta.sched.token_budget = 0;
    auto* train = app.add_subcommand("train", "train a model from scratch on a corpus");
    add_topology_flags(train, ta.topo);
    add_corpus_flags(train, ta.corpus);
    train->add_option("--preset", ta.preset, "model preset: tiny|110M|1.1B");
    train->add_option("--hyper", ta.hyper,
                      "schedule preset: small-110M|small-1.1B|large-1.1B");
    train->add_option("--out", ta.out_dir, "output directory for model.ckpt and metrics.csv");
    train->add_option("--seed", ta.seed, "initialization and data-order seed");
    train->add_option("--seq-len", ta.seq_len, "training sequence length");
    train->add_option("--steps", ta.steps, "override the total step count");
    train->add_option("--log-every", ta.log_every, "stdout progress interval (0 silences)");
    train->add_option("--m", ta.sched.m, "gradient-stopped iterations per step");
    train->add_option("--b", ta.sched.b, "differentiable iterations per step");
    train->add_option("--max-lr", ta.sched.max_lr, "peak learning rate");
    train->add_option("--min-lr", ta.sched.min_lr, "final learning rate");
    train->add_option("--warmup-steps", ta.sched.warmup_steps, "linear warmup steps");
    train->add_option("--warmup-ratio", ta.sched.warmup_ratio, "warmup fraction of total steps");
    train->add_option("--weight-decay", ta.sched.weight_decay, "decoupled weight decay");
    train->add_option("--grad-clip", ta.sched.grad_clip, "global gradient-norm limit");
    train->add_option("--batch-tokens", ta.sched.batch_tokens, "tokens per optimization step");
    train->add_option("--epochs", ta.sched.epochs, "passes over the corpus");
    train->add_option("--token-budget", ta.sched.token_budget,
                      "total training tokens (overrides --epochs)");

    // eval-ppl
    std::string ppl_ckpt;
    corpus_args ppl_corpus;
    int ppl_window = 0, ppl_stride = 0, ppl_m = 7, ppl_b = 2;
    auto* ppl = app.add_subcommand("eval-ppl", "windowed perplexity of a checkpoint on a corpus");
    ppl->add_option("--checkpoint", ppl_ckpt, "model checkpoint")->required();
    add_corpus_flags(ppl, ppl_corpus);
    ppl->add_option("--window", ppl_window, "scoring window length");
    ppl->add_option("--stride", ppl_stride, "window stride (default: window, non-overlapping)");
    ppl->add_option("--m", ppl_m, "gradient-stopped iterations (iterative maps)");
    ppl->add_option("--b", ppl_b, "remaining iterations (iterative maps)");

    // generate
    gen_args ga;
    auto* gen = app.add_subcommand("generate", "sample a continuation from a checkpoint");
    gen->add_option("--checkpoint", ga.ckpt, "model checkpoint")->required();
    gen->add_option("--prompt", ga.prompt, "prompt text (byte tokenizer)");
    gen->add_option("--prompt-ids", ga.prompt_ids, "comma-separated prompt token ids");
    gen->add_option("--max-new", ga.max_new, "tokens to generate");
    gen->add_option("--temperature", ga.temperature, "sampling temperature (0 = greedy)");
    gen->add_option("--top-k", ga.top_k, "restrict sampling to the k most likely tokens");
    gen->add_option("--seed", ga.seed, "sampler seed");
    gen->add_option("--m", ga.m, "gradient-stopped prefill iterations (iterative maps)");
    gen->add_option("--b", ga.b, "remaining prefill iterations (iterative maps)");
    gen->add_flag("--bos", ga.bos, "prepend the beginning-of-sequence token");
    gen->add_flag("--stop-on-eos", ga.stop_on_eos, "stop after the end-of-sequence token");

    // bench
    std::string bench_ckpt, bench_pairs, bench_csv;
    int bench_reps = 3, bench_m = 7, bench_b = 2;
    std::uint64_t bench_seed = 0;
    auto* bench = app.add_subcommand("bench", "timed generation runs, CSV per repetition");
    bench->add_option("--checkpoint", bench_ckpt, "model checkpoint")->required();
    bench->add_option("--pairs", bench_pairs, "workloads '<x>+<y>,...': x prompt, y new tokens")
        ->required();
    bench->add_option("--reps", bench_reps, "repetitions per workload");
    bench->add_option("--m", bench_m, "gradient-stopped prefill iterations (iterative maps)");
    bench->add_option("--b", bench_b, "remaining prefill iterations (iterative maps)");
    bench->add_option("--seed", bench_seed, "prompt-sampling seed");
    bench->add_option("--csv", bench_csv, "output CSV path ('-' or empty: stdout)");

    // convert
    std::string conv_in, conv_out;
    topo_args conv_topo;
    auto* conv = app.add_subcommand("convert",
                                    "re-target a checkpoint onto a new layer map (K/V group means)");
    conv->add_option("--checkpoint", conv_in, "source checkpoint (needs K/V at every source layer "
                                              "of each averaging group)")
        ->required();
    conv->add_option("--out", conv_out, "destination checkpoint path")->required();
    add_topology_flags(conv, conv_topo);

    try {
        app.parse(argc, argv);
        if (plan->parsed())
            return run_plan(plan_topo, plan_layers, plan_preset, plan_seq_len, plan_bytes);
        if (train->parsed()) {
            ta.has_batch_tokens = train->count("--batch-tokens") > 0;
            return run_train(ta);
        }
        if (ppl->parsed())
            return run_eval_ppl(ppl_ckpt, ppl_corpus, ppl_window, ppl_stride, ppl_m, ppl_b);
        if (gen->parsed()) return run_generate(ga);
        if (bench->parsed())
            return run_bench(bench_ckpt, bench_pairs, bench_reps, bench_m, bench_b, bench_seed,
                             bench_csv);
        if (conv->parsed()) return run_convert(conv_in, conv_out, conv_topo);
        std::fprintf(stderr, "error: config: no subcommand given\n");
        return 1;
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        std::string msg = e.what();
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        std::fprintf(stderr, "error: usage: %s\n", msg.c_str());
        return 1;
    } catch (const xlkv::error& e) {
        std::fprintf(stderr, "error: %s: %s\n", e.kind().c_str(), e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: internal: %s\n", e.what());
        return 1;
    }
}
