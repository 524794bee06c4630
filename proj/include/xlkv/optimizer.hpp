#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "xlkv/errors.hpp"
#include "xlkv/tensor.hpp"

namespace xlkv {

// Scales all gradients so their joint L2 norm is at most max_norm
// (no-op when max_norm <= 0). Returns the pre-clip norm.
template <typename T>
double clip_global_norm(std::vector<std::vector<T>>& grads, double max_norm) {
    double sq = 0.0;
    for (const auto& g : grads)
        for (T v : g) sq += static_cast<double>(v) * static_cast<double>(v);
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (auto& g : grads)
            for (T& v : g) v = static_cast<T>(static_cast<double>(v) * s);
    }
    return norm;
}

// AdamW with bias correction and decoupled weight decay. Moment state is
// kept in double regardless of the parameter scalar type.
template <typename T>
class AdamW {
public:
    AdamW(double beta1, double beta2, double eps, double weight_decay)
        : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

    void step(const std::vector<Tensor<T>*>& params, const std::vector<std::vector<T>>& grads,
              double lr) {
        if (params.size() != grads.size()) {
            throw state_error("optimizer: " + std::to_string(grads.size()) + " gradients for " +
                              std::to_string(params.size()) + " parameters");
        }
        if (m_.empty()) {
            m_.resize(params.size());
            v_.resize(params.size());
            for (size_t p = 0; p < params.size(); ++p) {
                m_[p].assign(static_cast<size_t>(params[p]->numel()), 0.0);
                v_[p].assign(static_cast<size_t>(params[p]->numel()), 0.0);
            }
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (size_t p = 0; p < params.size(); ++p) {
            Tensor<T>& w = *params[p];
            const auto& g = grads[p];
            if (static_cast<std::int64_t>(g.size()) != w.numel()) {
                throw shape_error("optimizer: gradient size mismatch at parameter " +
                                  std::to_string(p));
            }
            auto& m = m_[p];
            auto& v = v_[p];
            for (size_t i = 0; i < g.size(); ++i) {
                const double gi = static_cast<double>(g[i]);
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                double wi = static_cast<double>(w.data()[i]);
                wi -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * wi);
                w.data()[i] = static_cast<T>(wi);
            }
        }
    }

    std::int64_t steps_taken() const { return t_; }

private:
    double beta1_, beta2_, eps_, weight_decay_;
    std::int64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

} // namespace xlkv
