#pragma once

// Central-difference gradient checking, independent of the tape: perturb one
// scalar, re-run the full forward, difference the losses.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace oracle {

struct FdReport {
    std::int64_t checked = 0;
    std::int64_t failed = 0;
    double worst_rel = 0.0;
    std::string worst_at;
};

inline double fd_slope(double* slot, const std::function<double()>& eval, double h = 1e-5) {
    const double orig = *slot;
    *slot = orig + h;
    const double up = eval();
    *slot = orig - h;
    const double dn = eval();
    *slot = orig;
    return (up - dn) / (2.0 * h);
}

inline bool grads_close(double analytic, double numeric, double rel_tol = 1e-4,
                        double abs_tol = 1e-8) {
    const double diff = std::abs(analytic - numeric);
    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    return diff <= rel_tol * scale + abs_tol;
}

// Checks analytic gradients of `data[n]` against central differences on a
// deterministic sample of entries.
inline void check_tensor_grads(FdReport& rep, const std::string& name, double* data,
                               const double* analytic, std::int64_t n,
                               const std::function<double()>& eval, int max_samples = 6,
                               double rel_tol = 1e-4) {
    std::mt19937_64 rng(0x5eedULL ^ static_cast<std::uint64_t>(n));
    std::vector<std::int64_t> idx;
    if (n <= max_samples) {
        for (std::int64_t i = 0; i < n; ++i) idx.push_back(i);
    } else {
        for (int s = 0; s < max_samples; ++s)
            idx.push_back(static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(n)));
    }
    for (auto i : idx) {
        const double num = fd_slope(data + i, eval);
        const double ana = analytic[i];
        rep.checked += 1;
        const double scale = std::max({std::abs(ana), std::abs(num), 1e-12});
        const double rel = std::abs(ana - num) / scale;
        if (!grads_close(ana, num, rel_tol)) {
            rep.failed += 1;
            if (rel > rep.worst_rel) {
                rep.worst_rel = rel;
                rep.worst_at = name + "[" + std::to_string(i) + "] analytic=" +
                               std::to_string(ana) + " numeric=" + std::to_string(num);
            }
        }
    }
}

} // namespace oracle
