#pragma once

#include <cstdint>
#include <vector>

#include "xlkv/config.hpp"
#include "xlkv/model.hpp"
#include "xlkv/topology.hpp"

namespace xlkv {

// Fixed-capacity K/V store, one K and one V buffer per cache layer. The
// allocation is exact: capacity * kv_dim scalars per buffer, nothing for
// layers that share another layer's KVs.
template <typename T>
class KVCache {
public:
    KVCache(const KVTopology& topo, const ModelConfig& cfg, std::int64_t capacity)
        : topo_(topo), kv_dim_(cfg.kv_dim()), capacity_(capacity) {
        if (capacity_ < 1) {
            throw config_error("kv cache: capacity must be positive, got " +
                               std::to_string(capacity_));
        }
        slot_.assign(static_cast<size_t>(topo_.num_layers()) + 1, -1);
        for (int j : topo_.kv_layers()) {
            slot_[static_cast<size_t>(j)] = static_cast<int>(k_.size());
            k_.emplace_back(static_cast<size_t>(capacity_ * kv_dim_), T(0));
            v_.emplace_back(static_cast<size_t>(capacity_ * kv_dim_), T(0));
        }
    }

    std::int64_t capacity() const { return capacity_; }
    std::int64_t size() const { return size_; }
    int kv_dim() const { return kv_dim_; }

    std::int64_t allocated_bytes() const {
        return static_cast<std::int64_t>(k_.size()) * 2 * capacity_ * kv_dim_ *
               static_cast<std::int64_t>(sizeof(T));
    }

    // Stores `rows` positions of layer j's K/V starting at position `at`.
    // Writes are staged per layer; advance() commits the new length.
    void write_rows(int layer, std::int64_t at, const Tensor<T>& k, const Tensor<T>& v) {
        const int s = slot_of(layer);
        const std::int64_t rows = k.dim(0);
        if (k.shape() != v.shape() || k.dim(1) != kv_dim_) {
            throw shape_error("kv cache: bad K/V shapes " + shape_str(k.shape()) + " / " +
                              shape_str(v.shape()));
        }
        if (at < 0 || at + rows > capacity_) {
            throw capacity_error("kv cache: writing positions " + std::to_string(at) + ".." +
                                 std::to_string(at + rows - 1) + " exceeds capacity " +
                                 std::to_string(capacity_));
        }
        std::copy(k.data(), k.data() + rows * kv_dim_, k_[static_cast<size_t>(s)].data() + at * kv_dim_);
        std::copy(v.data(), v.data() + rows * kv_dim_, v_[static_cast<size_t>(s)].data() + at * kv_dim_);
    }

    void advance(std::int64_t rows) {
        if (size_ + rows > capacity_) {
            throw capacity_error("kv cache: length " + std::to_string(size_ + rows) +
                                 " exceeds capacity " + std::to_string(capacity_));
        }
        size_ += rows;
    }

    // Copy of layer j's first `upto` positions (upto == -1: all stored).
    LayerKV<T> view(int layer, std::int64_t upto = -1) const {
        const int s = slot_of(layer);
        if (upto < 0) upto = size_;
        if (upto > size_) {
            throw state_error("kv cache: requested " + std::to_string(upto) + " positions, have " +
                              std::to_string(size_));
        }
        LayerKV<T> out;
        out.k = Tensor<T>({upto, kv_dim_});
        out.v = Tensor<T>({upto, kv_dim_});
        std::copy(k_[static_cast<size_t>(s)].data(), k_[static_cast<size_t>(s)].data() + upto * kv_dim_,
                  out.k.data());
        std::copy(v_[static_cast<size_t>(s)].data(), v_[static_cast<size_t>(s)].data() + upto * kv_dim_,
                  out.v.data());
        return out;
    }

    void reset() { size_ = 0; }

private:
    int slot_of(int layer) const {
        if (layer < 1 || layer > topo_.num_layers() ||
            slot_[static_cast<size_t>(layer)] < 0) {
            throw state_error("kv cache: layer " + std::to_string(layer) + " is not a KV layer");
        }
        return slot_[static_cast<size_t>(layer)];
    }

    KVTopology topo_;
    std::int64_t kv_dim_ = 0;
    std::int64_t capacity_ = 0;
    std::int64_t size_ = 0;
    std::vector<int> slot_;
    std::vector<std::vector<T>> k_, v_;
};

} // namespace xlkv
