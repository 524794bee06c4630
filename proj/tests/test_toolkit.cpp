#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "reference_transformer.hpp"
#include "test_util.hpp"
#include "xlkv/checkpoint.hpp"
#include "xlkv/eval.hpp"
#include "xlkv/tokenizer.hpp"

using namespace xlkv;
using testutil::micro_config;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(bool(in));
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

struct BlobInfo {
    std::string name;
    std::vector<std::int64_t> dims;
};

// Independent walk of the serialized layout; doesn't touch the loader.
std::vector<BlobInfo> walk_blobs(const std::string& bytes) {
    ckpt::Reader r(bytes, "mem");
    REQUIRE(r.str(4) == "XLKV");
    REQUIRE(r.u32() == 1);
    const auto header_len = r.u64();
    r.str(header_len);
    const auto n = r.u64();
    std::vector<BlobInfo> out;
    for (std::uint64_t i = 0; i < n; ++i) {
        BlobInfo b;
        b.name = r.str(r.u32());
        const auto ndim = r.u32();
        std::int64_t numel = 1;
        for (std::uint32_t d = 0; d < ndim; ++d) {
            b.dims.push_back(static_cast<std::int64_t>(r.u64()));
            numel *= b.dims.back();
        }
        r.str(static_cast<size_t>(numel) * 4);
        out.push_back(std::move(b));
    }
    r.expect_end();
    return out;
}

Model<double> random_model(const ModelConfig& cfg, const KVTopology& topo, std::uint64_t seed) {
    auto m = Model<double>::make(cfg, topo);
    m.init_random(seed);
    return m;
}

} // namespace

TEST_CASE("checkpoint: round trip is byte-identical and meta survives") {
    auto cfg = micro_config(4, 16, 2, 2);
    auto topo = build_topology(Partitioning::sandwich, Positioning::middle, 4, 2);
    auto model = random_model(cfg, topo, 11);

    const std::string path = "ckpt_roundtrip.bin";
    save_checkpoint(path, model, 37);

    std::int64_t step = 0;
    auto loaded = load_checkpoint<double>(path, &step);
    CHECK(step == 37);
    CHECK(loaded.cfg.hidden == cfg.hidden);
    CHECK(loaded.topo.kv_map() == topo.kv_map());

    const std::string again = "ckpt_roundtrip2.bin";
    save_checkpoint(again, loaded, 37);
    CHECK(slurp(path) == slurp(again));

    auto meta = read_checkpoint_meta(path);
    CHECK(meta.step == 37);
    CHECK(meta.cfg.n_layers == 4);
    CHECK(meta.cfg.vocab_size == cfg.vocab_size);
    CHECK(meta.topo.partitioning() == Partitioning::sandwich);
    CHECK(meta.topo.kv_map() == topo.kv_map());

    // float32 storage: loaded weights match to f32 precision and behave
    auto a = model.forward({1, 2, 3, 4}, 0, 1);
    auto b = loaded.forward({1, 2, 3, 4}, 0, 1);
    CHECK(testutil::max_abs_diff(a.data(), b.data(), a.numel()) < 1e-4);

    std::remove(path.c_str());
    std::remove(again.c_str());
}

TEST_CASE("checkpoint: K/V blobs appear exactly once per cache layer") {
    auto cfg = micro_config(6, 16, 2, 2);
    for (int l : {1, 2, 3, 6}) {
        auto topo = build_topology(Partitioning::pizza, Positioning::middle, 6, l);
        auto model = random_model(cfg, topo, 13);
        const auto blobs = walk_blobs(checkpoint_bytes(model, 0));
        int wk = 0, wv = 0;
        for (const auto& b : blobs) {
            if (b.name.find(".wk") != std::string::npos) ++wk;
            if (b.name.find(".wv") != std::string::npos) ++wv;
        }
        CHECK(wk == l);
        CHECK(wv == l);
        // and they sit exactly at the cache layers
        for (int j : topo.kv_layers()) {
            const std::string want = "layers." + std::to_string(j) + ".wk";
            bool found = false;
            for (const auto& b : blobs) found |= b.name == want;
            CHECK(found);
        }
    }
}

TEST_CASE("checkpoint: corrupted files are rejected with the failure location") {
    auto cfg = micro_config(2, 16, 2, 2);
    auto topo = build_topology(Partitioning::pizza, Positioning::bottom, 2, 2);
    auto model = random_model(cfg, topo, 17);
    const std::string good = checkpoint_bytes(model, 5);
    const std::string path = "ckpt_corrupt.bin";

    spit(path, good.substr(0, good.size() - 5));
    CHECK_THROWS_AS(load_checkpoint<double>(path), io_error);

    spit(path, good + "xx");
    try {
        load_checkpoint<double>(path);
        FAIL("trailing bytes accepted");
    } catch (const io_error& e) {
        CHECK(std::string(e.what()).find("trailing") != std::string::npos);
    }

    std::string bad_magic = good;
    bad_magic[0] = 'Y';
    spit(path, bad_magic);
    CHECK_THROWS_AS(load_checkpoint<double>(path), io_error);

    CHECK_THROWS_AS(load_checkpoint<double>("no_such_dir/absent.bin"), io_error);
    CHECK_THROWS_AS(read_checkpoint_meta("no_such_dir/absent.bin"), io_error);
    std::remove(path.c_str());
}

TEST_CASE("conversion: destination K/V weights are the group means") {
    auto cfg = micro_config(6, 16, 2, 2);
    auto id_topo = build_topology(Partitioning::pizza, Positioning::bottom, 6, 6);
    auto src = random_model(cfg, id_topo, 19);

    for (const auto& [part, pos] : testutil::nine_configurations()) {
        auto dst_topo = build_topology(part, pos, 6, 3);
        auto dst = convert_model(src, dst_topo);

        for (int j = 1; j <= 6; ++j) {
            auto& d = dst.layers[static_cast<size_t>(j - 1)];
            if (!dst_topo.is_kv_layer(j)) {
                CHECK(!d.has_kv);
                continue;
            }
            // brute-force mean over the layers that read j, same accumulation order
            std::vector<int> group;
            for (int i = 1; i <= 6; ++i)
                if (dst_topo.target(i) == j) group.push_back(i);
            const auto n = d.wk.numel();
            std::vector<double> mk(static_cast<size_t>(n), 0.0), mv(static_cast<size_t>(n), 0.0);
            for (int i : group) {
                const auto& s = src.layers[static_cast<size_t>(i - 1)];
                for (std::int64_t e = 0; e < n; ++e) {
                    mk[static_cast<size_t>(e)] += s.wk.data()[e];
                    mv[static_cast<size_t>(e)] += s.wv.data()[e];
                }
            }
            for (std::int64_t e = 0; e < n; ++e) {
                mk[static_cast<size_t>(e)] /= static_cast<double>(group.size());
                mv[static_cast<size_t>(e)] /= static_cast<double>(group.size());
            }
            CHECK(testutil::max_abs_diff(d.wk.data(), mk.data(), n) == 0.0);
            CHECK(testutil::max_abs_diff(d.wv.data(), mv.data(), n) == 0.0);
        }

        // non-K/V weights come over verbatim
        CHECK(testutil::max_abs_diff(dst.tok_embed.data(), src.tok_embed.data(),
                                     src.tok_embed.numel()) == 0.0);
        CHECK(testutil::max_abs_diff(dst.layers[2].wq.data(), src.layers[2].wq.data(),
                                     src.layers[2].wq.numel()) == 0.0);

        auto logits = dst.forward({1, 2, 3}, 0, dst_topo.has_upward_dependency() ? 3 : 1);
        for (std::int64_t i = 0; i < logits.numel(); ++i) CHECK(std::isfinite(logits.data()[i]));
    }
}

TEST_CASE("conversion: identity to identity is byte-identical and a deep copy") {
    auto cfg = micro_config(3, 16, 2, 2);
    auto id_topo = build_topology(Partitioning::lasagna, Positioning::bottom, 3, 3);
    auto src = random_model(cfg, id_topo, 23);

    auto same = convert_model(src, id_topo);
    CHECK(checkpoint_bytes(src, 0) == checkpoint_bytes(same, 0));

    const double before = same.layers[0].wk.data()[0];
    src.layers[0].wk.data()[0] += 100.0;
    src.tok_embed.data()[0] += 100.0;
    CHECK(same.layers[0].wk.data()[0] == before);
    CHECK(same.tok_embed.data()[0] != src.tok_embed.data()[0]);
}

TEST_CASE("conversion: missing source K/V weights are an error") {
    auto cfg = micro_config(4, 16, 2, 2);
    auto thin = build_topology(Partitioning::pizza, Positioning::bottom, 4, 2); // layers 3,4 share 2
    auto src = random_model(cfg, thin, 29);

    auto id_topo = build_topology(Partitioning::pizza, Positioning::bottom, 4, 4);
    CHECK_THROWS_AS(convert_model(src, id_topo), config_error);

    auto other = build_topology(Partitioning::pizza, Positioning::bottom, 6, 3);
    CHECK_THROWS_AS(convert_model(src, other), config_error);

    // narrowing from identity is always possible
    auto full = random_model(cfg, id_topo, 31);
    CHECK_NOTHROW(convert_model(full, thin));
}

TEST_CASE("byte tokenizer") {
    ByteTokenizer tok;
    CHECK(tok.encode("AB") == std::vector<std::int32_t>{65, 66});
    CHECK(tok.encode("AB", true, false) == std::vector<std::int32_t>{256, 65, 66});
    CHECK(tok.encode("AB", true, true) == std::vector<std::int32_t>{256, 65, 66, 257});
    CHECK(tok.encode("").empty());
    CHECK(ByteTokenizer::vocab_size == 258);

    CHECK(tok.decode({256, 72, 105, 257}) == "Hi");
    CHECK(tok.decode({}).empty());

    // all 256 bytes round-trip
    std::string all;
    for (int c = 0; c < 256; ++c) all.push_back(static_cast<char>(c));
    CHECK(tok.decode(tok.encode(all)) == all);

    try {
        tok.decode({65, 66, 300});
        FAIL("non-byte id accepted");
    } catch (const data_error& e) {
        CHECK(std::string(e.what()).find("offset 2") != std::string::npos);
    }
}

TEST_CASE("pretokenized stream loader") {
    const std::string path = "tokens_test.bin";

    // u16 little-endian: 1, 258, 65535
    spit(path, std::string("\x01\x00\x02\x01\xff\xff", 6));
    auto t16 = load_pretokenized(path, 16, 70000);
    CHECK(t16 == std::vector<std::int32_t>{1, 258, 65535});

    // u32 little-endian: 1, 70000
    spit(path, std::string("\x01\x00\x00\x00\x70\x11\x01\x00", 8));
    auto t32 = load_pretokenized(path, 32, 100000);
    CHECK(t32 == std::vector<std::int32_t>{1, 70000});

    spit(path, std::string("\x01\x00\x02", 3));
    CHECK_THROWS_AS(load_pretokenized(path, 16, 1000), data_error);

    spit(path, std::string("\x05\x00\x05\x01", 4)); // 5, 261
    try {
        load_pretokenized(path, 16, 258);
        FAIL("out-of-vocab token accepted");
    } catch (const data_error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("index 1") != std::string::npos);
        CHECK(msg.find("byte offset 2") != std::string::npos);
    }

    CHECK_THROWS_AS(load_pretokenized(path, 12, 258), config_error);
    CHECK_THROWS_AS(load_pretokenized("no_such_dir/absent.bin", 16, 258), io_error);

    spit(path, "Hi");
    CHECK(load_text_corpus(path) == std::vector<std::int32_t>{72, 105});
    std::remove(path.c_str());
}

TEST_CASE("perplexity: zeroed output head scores uniform") {
    auto cfg = micro_config(2, 16, 2, 2);
    auto topo = build_topology(Partitioning::pizza, Positioning::bottom, 2, 2);
    auto model = random_model(cfg, topo, 37);
    std::fill(model.lm_head.data(), model.lm_head.data() + model.lm_head.numel(), 0.0);

    std::vector<std::int32_t> stream = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    auto res = eval_perplexity(model, stream, 4, 2, 0, 1);
    CHECK(res.mean_nll == doctest::Approx(std::log(double(cfg.vocab_size))).epsilon(1e-9));
    CHECK(res.perplexity == doctest::Approx(double(cfg.vocab_size)).epsilon(1e-9));
    CHECK(res.perplexity == doctest::Approx(std::exp(res.mean_nll)));
}

TEST_CASE("perplexity: window and stride accounting") {
    auto cfg = micro_config(2, 16, 2, 2);
    auto topo = build_topology(Partitioning::pizza, Positioning::bottom, 2, 1);
    auto model = random_model(cfg, topo, 41);
    std::vector<std::int32_t> stream;
    for (int i = 0; i < 10; ++i) stream.push_back(i % cfg.vocab_size);

    // overlapping: first window scores all 3 preds, later ones their last 2
    auto r = eval_perplexity(model, stream, 4, 2, 0, 1);
    CHECK(r.windows == 4);
    CHECK(r.scored_positions == 9); // every prediction scored once

    // non-overlapping
    auto nr = eval_perplexity(model, stream, 4, 4, 0, 1);
    CHECK(nr.windows == 3);
    CHECK(nr.scored_positions == 3 + 3 + 1);

    // whole stream in one window == mean NLL of the reference stack
    auto full_topo = build_topology(Partitioning::pizza, Positioning::bottom, 2, 2);
    auto full = random_model(cfg, full_topo, 43);
    auto one = eval_perplexity(full, stream, 10, 10, 0, 1);
    CHECK(one.windows == 1);
    CHECK(one.scored_positions == 9);
    auto ref = oracle::ref_from_model(full);
    const double want = oracle::ref_mean_nll(ref, stream, 0, 9);
    CHECK(one.mean_nll == doctest::Approx(want).epsilon(1e-9));

    CHECK_THROWS_AS(eval_perplexity(model, {1}, 4, 2, 0, 1), data_error);
    CHECK_THROWS_AS(eval_perplexity(model, stream, 1, 1, 0, 1), config_error);
    CHECK_THROWS_AS(eval_perplexity(model, stream, cfg.max_len + 1, 1, 0, 1), config_error);
    CHECK_THROWS_AS(eval_perplexity(model, stream, 4, 0, 0, 1), config_error);
    CHECK_THROWS_AS(eval_perplexity(model, stream, 4, 5, 0, 1), config_error);
}
