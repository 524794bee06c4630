#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "xlkv/config.hpp"

namespace xlkv {

enum class Partitioning { pizza, sandwich, lasagna, custom };
enum class Positioning { bottom, top, middle, middle_quarter, middle_three_quarter, custom };

std::string to_string(Partitioning p);
std::string to_string(Positioning p);
Partitioning partitioning_from_string(const std::string& s);
Positioning positioning_from_string(const std::string& s);

// Closed interval of 1-based layer indices.
struct LayerRange {
    int first = 0;
    int last = 0;
    int length() const { return last - first + 1; }
    bool contains(int layer) const { return layer >= first && layer <= last; }
};

// Cross-layer KV sharing map. Layers are 1-based throughout: kv_map[i-1] is
// the target layer whose KVs are paired with the queries of layer i. A layer
// with target(i) == i is a KV layer: it computes and caches its own KVs.
class KVTopology {
public:
    int num_layers() const { return static_cast<int>(map_.size()); }
    int num_kv_layers() const { return n_kv_layers_; }
    int target(int layer) const { return map_[static_cast<size_t>(layer - 1)]; }
    bool is_kv_layer(int layer) const { return target(layer) == layer; }
    const std::vector<int>& kv_map() const { return map_; }
    std::vector<int> kv_layers() const;
    int max_kv_layer() const;

    Partitioning partitioning() const { return partitioning_; }
    Positioning positioning() const { return positioning_; }

    // Layers requiring iterative computation; empty when kv(i) <= i everywhere.
    const std::optional<LayerRange>& iter_range() const { return iter_range_; }
    bool has_upward_dependency() const { return iter_range_.has_value(); }

    const std::vector<std::string>& warnings() const { return warnings_; }

    // Plain-text key/value block (embedded in checkpoint headers).
    std::string to_text() const;
    static KVTopology from_text(const std::string& text);

    friend KVTopology build_topology(Partitioning, Positioning, int, int);
    friend KVTopology build_custom_topology(const std::vector<int>&);

private:
    std::vector<int> map_;
    int n_kv_layers_ = 0;
    Partitioning partitioning_ = Partitioning::custom;
    Positioning positioning_ = Positioning::custom;
    std::optional<LayerRange> iter_range_;
    std::vector<std::string> warnings_;
};

// Builds one of the framework's configurations: pizza/sandwich/lasagna
// partitioning with bottom/top/middle (or quarter / three-quarter) target
// positioning, L layers of which l are KV layers.
KVTopology build_topology(Partitioning partitioning, Positioning positioning, int L, int l);

// Arbitrary valid map (research use). Entries are 1-based target layers.
KVTopology build_custom_topology(const std::vector<int>& kv_map);

// Recomputes the iterative-layer interval from the map alone: the interval
// spans every layer with an upward target and every such target.
std::optional<LayerRange> compute_iter_range(const KVTopology& t);

// Cache and parameter accounting for a topology under a model config.
struct CacheBudget {
    std::int64_t cache_bytes_per_token = 0;
    std::int64_t cache_bytes_total = 0; // at the seq_len it was computed for
    std::int64_t seq_len = 0;
    std::int64_t kv_param_count = 0;
    std::int64_t kv_param_savings_vs_standard = 0;
};

CacheBudget cache_budget(const KVTopology& t, const ModelConfig& cfg,
                         std::int64_t seq_len, int bytes_per_scalar);

} // namespace xlkv
