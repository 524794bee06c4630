#pragma once

#include <cstdint>
#include <vector>

namespace xlkv {

// Per-layer work accounting for one stage of a run. A "pass" is one
// invocation of a layer on a batch of positions; "positions" is the total
// number of token positions that invocation covered, so a layer run three
// times over 5 positions records passes=3, positions=15.
struct StageCounters {
    std::vector<std::int64_t> passes;
    std::vector<std::int64_t> positions;

    StageCounters() = default;
    explicit StageCounters(int n_layers)
        : passes(static_cast<size_t>(n_layers), 0),
          positions(static_cast<size_t>(n_layers), 0) {}

    void record(int layer, std::int64_t n_positions) {
        const auto idx = static_cast<size_t>(layer - 1);
        if (passes.size() <= idx) { // grow on demand so unsized counters are safe
            passes.resize(idx + 1, 0);
            positions.resize(idx + 1, 0);
        }
        passes[idx] += 1;
        positions[idx] += n_positions;
    }

    std::int64_t total_passes() const {
        std::int64_t t = 0;
        for (auto v : passes) t += v;
        return t;
    }
    std::int64_t total_positions() const {
        std::int64_t t = 0;
        for (auto v : positions) t += v;
        return t;
    }
};

struct RunCounters {
    StageCounters prefill;
    StageCounters decode;
    StageCounters train;
    // KV pairs written into a persistent cache (one unit = one position's
    // K and V at one cache layer).
    std::int64_t cache_writes = 0;

    RunCounters() = default;
    explicit RunCounters(int n_layers)
        : prefill(n_layers), decode(n_layers), train(n_layers) {}
};

} // namespace xlkv
