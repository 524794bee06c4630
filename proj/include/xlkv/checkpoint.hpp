#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "xlkv/model.hpp"

namespace xlkv {

namespace ckpt {

constexpr char magic[4] = {'X', 'L', 'K', 'V'};
constexpr std::uint32_t version = 1;

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f32(std::string& out, float f) {
    std::uint32_t v = 0;
    std::memcpy(&v, &f, 4);
    put_u32(out, v);
}

class Reader {
public:
    Reader(std::string bytes, std::string path)
        : bytes_(std::move(bytes)), path_(std::move(path)) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + static_cast<size_t>(i)])) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + static_cast<size_t>(i)])) << (8 * i);
        pos_ += 8;
        return v;
    }
    float f32() {
        const std::uint32_t v = u32();
        float f = 0;
        std::memcpy(&f, &v, 4);
        return f;
    }
    std::string str(size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool at_end() const { return pos_ == bytes_.size(); }
    void expect_end() const {
        if (!at_end()) {
            throw io_error("checkpoint '" + path_ + "': " +
                           std::to_string(bytes_.size() - pos_) + " trailing bytes");
        }
    }

private:
    void need(size_t n) const {
        if (pos_ + n > bytes_.size()) {
            throw io_error("checkpoint '" + path_ + "': truncated (need " + std::to_string(n) +
                           " bytes at offset " + std::to_string(pos_) + ")");
        }
    }
    std::string bytes_;
    std::string path_;
    size_t pos_ = 0;
};

inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::map<std::string, std::string> parse_kv(const std::string& text) {
    std::map<std::string, std::string> out;
    size_t start = 0;
    while (start < text.size()) {
        size_t end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        const std::string line = text.substr(start, end - start);
        const auto eq = line.find('=');
        if (eq != std::string::npos) out[line.substr(0, eq)] = line.substr(eq + 1);
        start = end + 1;
    }
    return out;
}

} // namespace ckpt

struct CheckpointMeta {
    ModelConfig cfg;
    KVTopology topo;
    std::int64_t step = 0;
};

inline std::string checkpoint_header_text(const ModelConfig& cfg, const KVTopology& topo,
                                          std::int64_t step) {
    std::string h;
    h += "hidden=" + std::to_string(cfg.hidden) + "\n";
    h += "intermediate=" + std::to_string(cfg.intermediate) + "\n";
    h += "n_layers=" + std::to_string(cfg.n_layers) + "\n";
    h += "n_heads=" + std::to_string(cfg.n_heads) + "\n";
    h += "n_kv_heads=" + std::to_string(cfg.n_kv_heads) + "\n";
    h += "head_dim=" + std::to_string(cfg.head_dim) + "\n";
    h += "vocab_size=" + std::to_string(cfg.vocab_size) + "\n";
    h += "max_len=" + std::to_string(cfg.max_len) + "\n";
    h += "rope_base=" + ckpt::fmt_double(cfg.rope_base) + "\n";
    h += "norm_eps=" + ckpt::fmt_double(cfg.norm_eps) + "\n";
    h += "tie_embeddings=" + std::to_string(cfg.tie_embeddings ? 1 : 0) + "\n";
    h += "step=" + std::to_string(step) + "\n";
    h += topo.to_text();
    return h;
}

inline CheckpointMeta parse_checkpoint_header(const std::string& text, const std::string& path) {
    const auto kv = ckpt::parse_kv(text);
    auto get = [&](const std::string& key) -> const std::string& {
        const auto it = kv.find(key);
        if (it == kv.end()) {
            throw io_error("checkpoint '" + path + "': header missing key '" + key + "'");
        }
        return it->second;
    };
    CheckpointMeta meta;
    meta.cfg.hidden = std::stoi(get("hidden"));
    meta.cfg.intermediate = std::stoi(get("intermediate"));
    meta.cfg.n_layers = std::stoi(get("n_layers"));
    meta.cfg.n_heads = std::stoi(get("n_heads"));
    meta.cfg.n_kv_heads = std::stoi(get("n_kv_heads"));
    meta.cfg.head_dim = std::stoi(get("head_dim"));
    meta.cfg.vocab_size = std::stoi(get("vocab_size"));
    meta.cfg.max_len = std::stoi(get("max_len"));
    meta.cfg.rope_base = std::stod(get("rope_base"));
    meta.cfg.norm_eps = std::stod(get("norm_eps"));
    meta.cfg.tie_embeddings = std::stoi(get("tie_embeddings")) != 0;
    meta.step = std::stoll(get("step"));
    meta.cfg.validate();
    meta.topo = KVTopology::from_text(text);
    if (meta.topo.num_layers() != meta.cfg.n_layers) {
        throw io_error("checkpoint '" + path + "': kv_map covers " +
                       std::to_string(meta.topo.num_layers()) + " layers, config has " +
                       std::to_string(meta.cfg.n_layers));
    }
    return meta;
}

// Serializes the model as: magic, version, length-prefixed plain-text
// header, then named weight blobs (name, shape, float32 little-endian
// row-major data) in canonical parameter order.
template <typename T>
std::string checkpoint_bytes(Model<T>& model, std::int64_t step) {
    std::string out(ckpt::magic, 4);
    ckpt::put_u32(out, ckpt::version);
    const std::string header = checkpoint_header_text(model.cfg, model.topo, step);
    ckpt::put_u64(out, header.size());
    out += header;
    const auto named = model.named_parameters();
    ckpt::put_u64(out, named.size());
    for (const auto& [name, t] : named) {
        ckpt::put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        ckpt::put_u32(out, static_cast<std::uint32_t>(t->ndim()));
        for (size_t d = 0; d < t->ndim(); ++d)
            ckpt::put_u64(out, static_cast<std::uint64_t>(t->dim(d)));
        for (std::int64_t i = 0; i < t->numel(); ++i)
            ckpt::put_f32(out, static_cast<float>(t->data()[i]));
    }
    return out;
}

template <typename T>
void save_checkpoint(const std::string& path, Model<T>& model, std::int64_t step) {
    const std::string bytes = checkpoint_bytes(model, step);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot write checkpoint '" + path + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw io_error("short write to checkpoint '" + path + "'");
}

template <typename T>
Model<T> load_checkpoint(const std::string& path, std::int64_t* step_out = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open checkpoint '" + path + "'");
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    ckpt::Reader r(std::move(bytes), path);
    if (r.str(4) != std::string(ckpt::magic, 4)) {
        throw io_error("checkpoint '" + path + "': bad magic");
    }
    const auto ver = r.u32();
    if (ver != ckpt::version) {
        throw io_error("checkpoint '" + path + "': unsupported version " + std::to_string(ver));
    }
    const auto header_len = r.u64();
    const CheckpointMeta meta = parse_checkpoint_header(r.str(header_len), path);
    Model<T> model = Model<T>::make(meta.cfg, meta.topo);
    const auto n_blobs = r.u64();
    auto named = model.named_parameters();
    if (n_blobs != named.size()) {
        throw io_error("checkpoint '" + path + "': " + std::to_string(n_blobs) + " blobs, model needs " +
                       std::to_string(named.size()));
    }
    for (size_t bi = 0; bi < n_blobs; ++bi) {
        const auto name_len = r.u32();
        const std::string name = r.str(name_len);
        if (name != named[bi].first) {
            throw io_error("checkpoint '" + path + "': blob " + std::to_string(bi) + " is '" +
                           name + "', expected '" + named[bi].first + "'");
        }
        Tensor<T>& t = *named[bi].second;
        const auto ndim = r.u32();
        if (ndim != t.ndim()) {
            throw io_error("checkpoint '" + path + "': blob '" + name + "' has rank " +
                           std::to_string(ndim) + ", expected " + std::to_string(t.ndim()));
        }
        for (size_t d = 0; d < t.ndim(); ++d) {
            const auto dim = static_cast<std::int64_t>(r.u64());
            if (dim != t.dim(d)) {
                throw io_error("checkpoint '" + path + "': blob '" + name + "' dim " +
                               std::to_string(d) + " is " + std::to_string(dim) + ", expected " +
                               std::to_string(t.dim(d)));
            }
        }
        for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] = static_cast<T>(r.f32());
    }
    r.expect_end();
    if (step_out) *step_out = meta.step;
    return model;
}

inline CheckpointMeta read_checkpoint_meta(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open checkpoint '" + path + "'");
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    ckpt::Reader r(std::move(bytes), path);
    if (r.str(4) != std::string(ckpt::magic, 4)) {
        throw io_error("checkpoint '" + path + "': bad magic");
    }
    const auto ver = r.u32();
    if (ver != ckpt::version) {
        throw io_error("checkpoint '" + path + "': unsupported version " + std::to_string(ver));
    }
    const auto header_len = r.u64();
    return parse_checkpoint_header(r.str(header_len), path);
}

template <typename T>
Tensor<T> clone_tensor(const Tensor<T>& t) {
    Tensor<T> out(t.shape());
    std::copy(t.data(), t.data() + t.numel(), out.data());
    return out;
}

// Re-targets a model onto a new layer map. W_K/W_V of each cache layer j in
// the destination become the elementwise mean over every source layer whose
// queries will read j's KVs; all other weights are copied. The source must
// provide K/V weights at each layer of every averaging set (a model with
// the identity map always does).
template <typename T>
Model<T> convert_model(const Model<T>& src, const KVTopology& dst_topo) {
    if (dst_topo.num_layers() != src.cfg.n_layers) {
        throw config_error("convert: target map covers " + std::to_string(dst_topo.num_layers()) +
                           " layers, model has " + std::to_string(src.cfg.n_layers));
    }
    Model<T> dst = Model<T>::make(src.cfg, dst_topo);
    dst.tok_embed = clone_tensor(src.tok_embed);
    dst.final_norm = clone_tensor(src.final_norm);
    if (!src.cfg.tie_embeddings) dst.lm_head = clone_tensor(src.lm_head);
    for (int i = 1; i <= src.cfg.n_layers; ++i) {
        const auto& s = src.layers[static_cast<size_t>(i - 1)];
        auto& d = dst.layers[static_cast<size_t>(i - 1)];
        d.attn_norm = clone_tensor(s.attn_norm);
        d.wq = clone_tensor(s.wq);
        d.wo = clone_tensor(s.wo);
        d.mlp_norm = clone_tensor(s.mlp_norm);
        d.w_gate = clone_tensor(s.w_gate);
        d.w_up = clone_tensor(s.w_up);
        d.w_down = clone_tensor(s.w_down);
    }
    for (int j : dst_topo.kv_layers()) {
        std::vector<int> group;
        for (int i = 1; i <= src.cfg.n_layers; ++i) {
            if (dst_topo.target(i) == j) group.push_back(i);
        }
        auto& d = dst.layers[static_cast<size_t>(j - 1)];
        d.wk = Tensor<T>({static_cast<std::int64_t>(src.cfg.hidden),
                          static_cast<std::int64_t>(src.cfg.kv_dim())});
        d.wv = Tensor<T>(d.wk.shape());
        for (int i : group) {
            const auto& s = src.layers[static_cast<size_t>(i - 1)];
            if (!s.has_kv) {
                throw config_error("convert: source layer " + std::to_string(i) +
                                   " has no K/V weights but is needed for target layer " +
                                   std::to_string(j));
            }
            for (std::int64_t e = 0; e < d.wk.numel(); ++e) {
                d.wk.data()[e] += s.wk.data()[e];
                d.wv.data()[e] += s.wv.data()[e];
            }
        }
        const T inv = T(1) / static_cast<T>(group.size());
        for (std::int64_t e = 0; e < d.wk.numel(); ++e) {
            d.wk.data()[e] *= inv;
            d.wv.data()[e] *= inv;
        }
    }
    return dst;
}

} // namespace xlkv
