#include "xlkv/topology.hpp"

#include <algorithm>
#include <sstream>

#include "xlkv/errors.hpp"

namespace xlkv {

std::string to_string(Partitioning p) {
    switch (p) {
        case Partitioning::pizza: return "pizza";
        case Partitioning::sandwich: return "sandwich";
        case Partitioning::lasagna: return "lasagna";
        case Partitioning::custom: return "custom";
    }
    return "?";
}

std::string to_string(Positioning p) {
    switch (p) {
        case Positioning::bottom: return "bottom";
        case Positioning::top: return "top";
        case Positioning::middle: return "middle";
        case Positioning::middle_quarter: return "middle-1/4";
        case Positioning::middle_three_quarter: return "middle-3/4";
        case Positioning::custom: return "custom";
    }
    return "?";
}

Partitioning partitioning_from_string(const std::string& s) {
    if (s == "pizza") return Partitioning::pizza;
    if (s == "sandwich") return Partitioning::sandwich;
    if (s == "lasagna") return Partitioning::lasagna;
    if (s == "custom") return Partitioning::custom;
    throw config_error("unknown partitioning '" + s + "' (expected pizza, sandwich or lasagna)");
}

Positioning positioning_from_string(const std::string& s) {
    if (s == "bottom") return Positioning::bottom;
    if (s == "top") return Positioning::top;
    if (s == "middle") return Positioning::middle;
    if (s == "middle-1/4" || s == "quarter") return Positioning::middle_quarter;
    if (s == "middle-3/4" || s == "three-quarter") return Positioning::middle_three_quarter;
    if (s == "custom") return Positioning::custom;
    throw config_error("unknown positioning '" + s +
                       "' (expected bottom, top, middle, middle-1/4 or middle-3/4)");
}

std::vector<int> KVTopology::kv_layers() const {
    std::vector<int> out;
    for (int i = 1; i <= num_layers(); ++i) {
        if (is_kv_layer(i)) out.push_back(i);
    }
    return out;
}

int KVTopology::max_kv_layer() const {
    int best = 0;
    for (int i = 1; i <= num_layers(); ++i) {
        if (is_kv_layer(i)) best = i;
    }
    return best;
}

namespace {

// Target index within a shared range [a, b]. Middle and the quarter variants
// use floor rounding.
int position_target(Positioning pos, int a, int b) {
    switch (pos) {
        case Positioning::bottom: return a;
        case Positioning::top: return b;
        case Positioning::middle: return a + (b - a) / 2;
        case Positioning::middle_quarter: return a + (b - a) / 4;
        case Positioning::middle_three_quarter: return a + 3 * (b - a) / 4;
        case Positioning::custom: break;
    }
    throw config_error("positioning 'custom' is only valid for custom maps");
}

std::optional<LayerRange> iter_range_of_map(const std::vector<int>& map) {
    int first = 0;
    int last_target = 0;
    for (int i = 1; i <= static_cast<int>(map.size()); ++i) {
        const int t = map[static_cast<size_t>(i - 1)];
        if (t > i) {
            if (first == 0) first = i;
            last_target = std::max(last_target, t);
        }
    }
    if (first == 0) return std::nullopt;
    return LayerRange{first, last_target};
}

void check_map_invariants(const std::vector<int>& map, std::vector<std::string>* warnings) {
    const int L = static_cast<int>(map.size());
    for (int i = 1; i <= L; ++i) {
        const int t = map[static_cast<size_t>(i - 1)];
        if (t < 1 || t > L) {
            throw config_error("kv map: layer " + std::to_string(i) + " targets layer " +
                               std::to_string(t) + ", outside 1.." + std::to_string(L));
        }
        if (map[static_cast<size_t>(t - 1)] != t) {
            throw config_error("kv map: layer " + std::to_string(i) + " targets layer " +
                               std::to_string(t) + ", which is not a KV layer");
        }
    }
    if (warnings && map[0] != 1) {
        warnings->push_back("layer 1 is not a KV layer; expect degraded quality");
    }
}

} // namespace

KVTopology build_topology(Partitioning partitioning, Positioning positioning, int L, int l) {
    if (L < 1) throw config_error("topology: L must be positive, got " + std::to_string(L));
    if (l < 1 || l > L) {
        throw config_error("topology: l must satisfy 1 <= l <= L, got l=" + std::to_string(l) +
                           " with L=" + std::to_string(L));
    }
    if (partitioning == Partitioning::custom || positioning == Positioning::custom) {
        throw config_error("topology: use build_custom_topology for custom maps");
    }

    std::vector<int> map(static_cast<size_t>(L), 0);
    switch (partitioning) {
        case Partitioning::pizza: {
            // First l-1 layers are KV layers; the remaining L-l+1 share one target.
            for (int i = 1; i <= l - 1; ++i) map[static_cast<size_t>(i - 1)] = i;
            const int t = position_target(positioning, l, L);
            for (int i = l; i <= L; ++i) map[static_cast<size_t>(i - 1)] = t;
            break;
        }
        case Partitioning::sandwich: {
            if (l < 2 && L > l) {
                throw config_error("topology: sandwich requires at least 2 KV layers when L > l "
                                   "(no top KV layer otherwise)");
            }
            const int lo = l / 2;       // ceil((l-1)/2)
            const int hi = (l - 1) / 2; // floor((l-1)/2)
            for (int i = 1; i <= lo; ++i) map[static_cast<size_t>(i - 1)] = i;
            for (int i = L - hi + 1; i <= L; ++i) map[static_cast<size_t>(i - 1)] = i;
            const int t = position_target(positioning, lo + 1, L - hi);
            for (int i = lo + 1; i <= L - hi; ++i) map[static_cast<size_t>(i - 1)] = t;
            break;
        }
        case Partitioning::lasagna: {
            // l groups of consecutive layers; remainder goes to the earliest
            // groups. The first group's target is always its bottom layer.
            const int base = L / l;
            const int rem = L % l;
            int start = 1;
            for (int g = 0; g < l; ++g) {
                const int size = base + (g < rem ? 1 : 0);
                const int end = start + size - 1;
                const int t = (g == 0) ? start : position_target(positioning, start, end);
                for (int i = start; i <= end; ++i) map[static_cast<size_t>(i - 1)] = t;
                start = end + 1;
            }
            break;
        }
        case Partitioning::custom:
            break; // unreachable
    }

    KVTopology topo;
    topo.map_ = std::move(map);
    topo.partitioning_ = partitioning;
    topo.positioning_ = positioning;
    check_map_invariants(topo.map_, nullptr);
    topo.n_kv_layers_ = static_cast<int>(topo.kv_layers().size());
    if (topo.n_kv_layers_ != l) {
        throw config_error("topology: construction produced " + std::to_string(topo.n_kv_layers_) +
                           " KV layers, expected " + std::to_string(l));
    }
    topo.iter_range_ = iter_range_of_map(topo.map_);
    return topo;
}

KVTopology build_custom_topology(const std::vector<int>& kv_map) {
    if (kv_map.empty()) throw config_error("kv map: empty");
    KVTopology topo;
    topo.map_ = kv_map;
    topo.partitioning_ = Partitioning::custom;
    topo.positioning_ = Positioning::custom;
    check_map_invariants(topo.map_, &topo.warnings_);
    topo.n_kv_layers_ = static_cast<int>(topo.kv_layers().size());
    topo.iter_range_ = iter_range_of_map(topo.map_);
    return topo;
}

std::optional<LayerRange> compute_iter_range(const KVTopology& t) {
    return iter_range_of_map(t.kv_map());
}

std::string KVTopology::to_text() const {
    std::ostringstream os;
    os << "partitioning=" << xlkv::to_string(partitioning_) << "\n";
    os << "positioning=" << xlkv::to_string(positioning_) << "\n";
    os << "layers=" << num_layers() << "\n";
    os << "kv_layers=" << num_kv_layers() << "\n";
    os << "kv_map=";
    for (size_t i = 0; i < map_.size(); ++i) {
        if (i) os << ",";
        os << map_[i];
    }
    os << "\n";
    return os.str();
}

KVTopology KVTopology::from_text(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    std::string partitioning, positioning, map_str;
    int layers = 0, kv_layers = 0;
    while (std::getline(is, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        if (key == "partitioning") partitioning = val;
        else if (key == "positioning") positioning = val;
        else if (key == "layers") layers = std::stoi(val);
        else if (key == "kv_layers") kv_layers = std::stoi(val);
        else if (key == "kv_map") map_str = val;
    }
    if (map_str.empty()) throw data_error("topology text: missing kv_map");
    std::vector<int> map;
    std::istringstream ms(map_str);
    std::string item;
    while (std::getline(ms, item, ',')) map.push_back(std::stoi(item));

    KVTopology topo = build_custom_topology(map);
    if (!partitioning.empty()) topo.partitioning_ = partitioning_from_string(partitioning);
    if (!positioning.empty()) topo.positioning_ = positioning_from_string(positioning);
    if (layers != 0 && layers != topo.num_layers()) {
        throw data_error("topology text: layers=" + std::to_string(layers) + " but kv_map has " +
                         std::to_string(topo.num_layers()) + " entries");
    }
    if (kv_layers != 0 && kv_layers != topo.num_kv_layers()) {
        throw data_error("topology text: kv_layers=" + std::to_string(kv_layers) + " but map has " +
                         std::to_string(topo.num_kv_layers()) + " KV layers");
    }
    return topo;
}

CacheBudget cache_budget(const KVTopology& t, const ModelConfig& cfg,
                         std::int64_t seq_len, int bytes_per_scalar) {
    const std::int64_t l = t.num_kv_layers();
    const std::int64_t L = t.num_layers();
    const std::int64_t kv_dim = static_cast<std::int64_t>(cfg.n_kv_heads) * cfg.head_dim;
    CacheBudget b;
    b.seq_len = seq_len;
    b.cache_bytes_per_token = l * 2 * kv_dim * bytes_per_scalar;
    b.cache_bytes_total = b.cache_bytes_per_token * seq_len;
    b.kv_param_count = l * 2 * static_cast<std::int64_t>(cfg.hidden) * kv_dim;
    b.kv_param_savings_vs_standard = (L - l) * 2 * static_cast<std::int64_t>(cfg.hidden) * kv_dim;
    return b;
}

} // namespace xlkv
