#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <vector>

#include "xlkv/tape.hpp"
#include "xlkv/tensor.hpp"

namespace xlkv {

namespace detail {

using i64 = std::int64_t;

// C(n x m) += A(n x k) * B(k x m)
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, i64 n, i64 k, i64 m) {
    for (i64 i = 0; i < n; ++i) {
        T* crow = c + i * m;
        for (i64 p = 0; p < k; ++p) {
            const T av = a[i * k + p];
            const T* brow = b + p * m;
            for (i64 j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
}

// C(n x k) += A(n x m) * B(k x m)^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, i64 n, i64 m, i64 k) {
    for (i64 i = 0; i < n; ++i) {
        const T* arow = a + i * m;
        for (i64 j = 0; j < k; ++j) {
            const T* brow = b + j * m;
            T acc = T(0);
            for (i64 p = 0; p < m; ++p) acc += arow[p] * brow[p];
            c[i * k + j] += acc;
        }
    }
}

// C(k x m) += A(n x k)^T * B(n x m)
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, i64 k, i64 n, i64 m) {
    for (i64 i = 0; i < n; ++i) {
        const T* brow = b + i * m;
        for (i64 p = 0; p < k; ++p) {
            const T av = a[i * k + p];
            T* crow = c + p * m;
            for (i64 j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
void check_2d(const Tensor<T>& t, const char* op) {
    if (t.ndim() != 2) {
        throw shape_error(std::string(op) + ": expected 2-d tensor, got " + shape_str(t.shape()));
    }
}

// Rotary rotation over consecutive pairs; inverse applies the transpose.
template <typename T>
void rope_rotate(const T* src, T* dst, bool inverse, i64 n, i64 dtot, int head_dim,
                 const std::vector<i64>& positions, double base) {
    const i64 n_heads = dtot / head_dim;
    for (i64 i = 0; i < n; ++i) {
        const auto pos = static_cast<double>(positions[static_cast<size_t>(i)]);
        for (i64 h = 0; h < n_heads; ++h) {
            const i64 off = i * dtot + h * head_dim;
            for (i64 p = 0; p < head_dim / 2; ++p) {
                const double theta = pos * std::pow(base, -2.0 * static_cast<double>(p) / head_dim);
                const T c = static_cast<T>(std::cos(theta));
                const T s = static_cast<T>(inverse ? -std::sin(theta) : std::sin(theta));
                const T x0 = src[off + 2 * p];
                const T x1 = src[off + 2 * p + 1];
                dst[off + 2 * p] = x0 * c - x1 * s;
                dst[off + 2 * p + 1] = x0 * s + x1 * c;
            }
        }
    }
}

} // namespace detail

// Common tape of any tracked operand; null when untracked or paused.
template <typename T>
inline Tape<T>* tape_of(std::initializer_list<const Tensor<T>*> ts) {
    Tape<T>* tape = nullptr;
    for (const Tensor<T>* t : ts) {
        if (t->tracked()) {
            if (tape && tape != t->tape()) {
                throw state_error("operands are tracked on different tapes");
            }
            tape = t->tape();
        }
    }
    if (tape && !tape->recording()) return nullptr;
    return tape;
}

template <typename T>
inline Tensor<T> stop_gradient(const Tensor<T>& x) {
    return x.detached();
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_2d(a, "matmul");
    detail::check_2d(b, "matmul");
    if (a.dim(1) != b.dim(0)) {
        throw shape_error("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                          shape_str(b.shape()));
    }
    const auto n = a.dim(0), k = a.dim(1), m = b.dim(1);
    Tensor<T> out({n, m});
    detail::gemm_nn(a.data(), b.data(), out.data(), n, k, m);
    if (Tape<T>* tp = tape_of<T>({&a, &b})) {
        const auto on = tp->new_node(out.numel());
        out.track(tp, on);
        const auto an = a.tracked() ? a.node() : -1;
        const auto bn = b.tracked() ? b.node() : -1;
        auto abuf = a.buffer();
        auto bbuf = b.buffer();
        tp->set_backward(on, [=](Tape<T>& tape) {
            const auto& go = tape.grad_of(on);
            if (an >= 0) detail::gemm_nt(go.data(), bbuf->data(), tape.grad_of(an).data(), n, m, k);
            if (bn >= 0) detail::gemm_tn(abuf->data(), go.data(), tape.grad_of(bn).data(), k, n, m);
        });
    }
    return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw shape_error("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
    }
    Tensor<T> out(a.shape());
    const auto n = out.numel();
    for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
    if (Tape<T>* tp = tape_of<T>({&a, &b})) {
        const auto on = tp->new_node(n);
        out.track(tp, on);
        const auto an = a.tracked() ? a.node() : -1;
        const auto bn = b.tracked() ? b.node() : -1;
        tp->set_backward(on, [=](Tape<T>& tape) {
            const auto& go = tape.grad_of(on);
            if (an >= 0) {
                auto& ga = tape.grad_of(an);
                for (std::int64_t i = 0; i < n; ++i) ga[i] += go[i];
            }
            if (bn >= 0) {
                auto& gb = tape.grad_of(bn);
                for (std::int64_t i = 0; i < n; ++i) gb[i] += go[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw shape_error("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
    }
    Tensor<T> out(a.shape());
    const auto n = out.numel();
    for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
    if (Tape<T>* tp = tape_of<T>({&a, &b})) {
        const auto on = tp->new_node(n);
        out.track(tp, on);
        const auto an = a.tracked() ? a.node() : -1;
        const auto bn = b.tracked() ? b.node() : -1;
        auto abuf = a.buffer();
        auto bbuf = b.buffer();
        tp->set_backward(on, [=](Tape<T>& tape) {
            const auto& go = tape.grad_of(on);
            if (an >= 0) {
                auto& ga = tape.grad_of(an);
                for (std::int64_t i = 0; i < n; ++i) ga[i] += go[i] * (*bbuf)[i];
            }
            if (bn >= 0) {
                auto& gb = tape.grad_of(bn);
                for (std::int64_t i = 0; i < n; ++i) gb[i] += go[i] * (*abuf)[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    Tensor<T> out(a.shape());
    const auto n = out.numel();
    for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * factor;
    if (Tape<T>* tp = tape_of<T>({&a})) {
        const auto on = tp->new_node(n);
        out.track(tp, on);
        const auto an = a.node();
        tp->set_backward(on, [=](Tape<T>& tape) {
            const auto& go = tape.grad_of(on);
            auto& ga = tape.grad_of(an);
            for (std::int64_t i = 0; i < n; ++i) ga[i] += go[i] * factor;
        });
    }
    return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
    detail::check_2d(a, "transpose");
    const auto n = a.dim(0), m = a.dim(1);
    Tensor<T> out({m, n});
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < m; ++j) out.data()[j * n + i] = a.data()[i * m + j];
    if (Tape<T>* tp = tape_of<T>({&a})) {
        const auto on = tp->new_node(out.numel());
        out.track(tp, on);
        const auto an = a.node();
        tp->set_backward(on, [=](Tape<T>& tape) {
            const auto& go = tape.grad_of(on);
            auto& ga = tape.grad_of(an);
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t j = 0; j < m; ++j) ga[i * m + j] += go[j * n + i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw shape_error("reshape: cannot view " + shape_str(a.shape()) + " as " +
                          shape_str(shape));
    }
    Tensor<T> out(std::move(shape), a.buffer());
    if (Tape<T>* tp = tape_of<T>({&a})) {
        const auto on = tp->new_node(out.numel());
        out.track(tp, on);
        const auto an = a.node();
        const auto n = a.numel();
        tp->set_backward(on, [=](Tape<T>& tape) {
            const auto& go = tape.grad_of(on);
            auto& ga = tape.grad_of(an);
            for (std::int64_t i = 0; i < n; ++i) ga[i] += go[i];
        });
    }
    return out;
}

// Row slice [r0, r1) of a 2-d tensor.
template <typename T>
Tensor<T> rows(const Tensor<T>& a, std::int64_t r0, std::int64_t r1) {
    detail::check_2d(a, "rows");
    if (r0 < 0 || r1 > a.dim(0) || r0 >= r1) {
        throw shape_error("rows: invalid slice [" + std::to_string(r0) + ", " + std::to_string(r1) +
                          ") of " + shape_str(a.shape()));
    }
    const auto m = a.dim(1);
    Tensor<T> out({r1 - r0, m});
    std::copy(a.data() + r0 * m, a.data() + r1 * m, out.data());
    if (Tape<T>* tp = tape_of<T>({&a})) {
        const auto on = tp->new_node(out.numel());
        out.track(tp, on);
        const auto an = a.node();
        tp->set_backward(on, [=](Tape<T>& tape) {
            const auto& go = tape.grad_of(on);
            auto& ga = tape.grad_of(an);
            for (std::int64_t i = 0; i < (r1 - r0) * m; ++i) ga[r0 * m + i] += go[i];
        });
    }
    return out;
}

// Column slice [c0, c1) of a 2-d tensor.
template <typename T>
Tensor<T> cols(const Tensor<T>& a, std::int64_t c0, std::int64_t c1) {
    detail::check_2d(a, "cols");
    if (c0 < 0 || c1 > a.dim(1) || c0 >= c1) {
        throw shape_error("cols: invalid slice [" + std::to_string(c0) + ", " + std::to_string(c1) +
                          ") of " + shape_str(a.shape()));
    }
    const auto n = a.dim(0), m = a.dim(1), w = c1 - c0;
    Tensor<T> out({n, w});
    for (std::int64_t i = 0; i < n; ++i)
        std::copy(a.data() + i * m + c0, a.data() + i * m + c1, out.data() + i * w);
    if (Tape<T>* tp = tape_of<T>({&a})) {
        const auto on = tp->new_node(out.numel());
        out.track(tp, on);
        const auto an = a.node();
        tp->set_backward(on, [=](Tape<T>& tape) {
            const auto& go = tape.grad_of(on);
            auto& ga = tape.grad_of(an);
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t j = 0; j < w; ++j) ga[i * m + c0 + j] += go[i * w + j];
        });
    }
    return out;
}

// Stacks 2-d tensors along axis 0 (rows) or 1 (columns).
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
    if (parts.empty()) throw shape_error("concat: no inputs");
    if (axis != 0 && axis != 1) throw shape_error("concat: axis must be 0 or 1");
    for (const auto& p : parts) detail::check_2d(p, "concat");
    const auto fixed = axis == 0 ? parts[0].dim(1) : parts[0].dim(0);
    std::int64_t total = 0;
    for (const auto& p : parts) {
        const auto f = axis == 0 ? p.dim(1) : p.dim(0);
        if (f != fixed) {
            throw shape_error("concat: mismatched shapes " + shape_str(parts[0].shape()) + " vs " +
                              shape_str(p.shape()));
        }
        total += axis == 0 ? p.dim(0) : p.dim(1);
    }
    const auto n = axis == 0 ? total : fixed;
    const auto m = axis == 0 ? fixed : total;
    Tensor<T> out({n, m});
    std::int64_t off = 0;
    for (const auto& p : parts) {
        if (axis == 0) {
            std::copy(p.data(), p.data() + p.numel(), out.data() + off * m);
            off += p.dim(0);
        } else {
            const auto w = p.dim(1);
            for (std::int64_t i = 0; i < n; ++i)
                std::copy(p.data() + i * w, p.data() + (i + 1) * w, out.data() + i * m + off);
            off += w;
        }
    }
    Tape<T>* tp = nullptr;
    for (const auto& p : parts) {
        if (p.tracked()) {
            tp = tape_of<T>({&p});
            break;
        }
    }
    if (tp) {
        const auto on = tp->new_node(out.numel());
        out.track(tp, on);
        struct Piece {
            std::int64_t node, off, extent;
        };
        std::vector<Piece> pieces;
        std::int64_t o = 0;
        for (const auto& p : parts) {
            const auto e = axis == 0 ? p.dim(0) : p.dim(1);
            pieces.push_back({p.tracked() ? p.node() : -1, o, e});
            o += e;
        }
        tp->set_backward(on, [=](Tape<T>& tape) {
            const auto& go = tape.grad_of(on);
            for (const auto& pc : pieces) {
                if (pc.node < 0) continue;
                auto& ga = tape.grad_of(pc.node);
                if (axis == 0) {
                    for (std::int64_t i = 0; i < pc.extent * m; ++i) ga[i] += go[pc.off * m + i];
                } else {
                    for (std::int64_t i = 0; i < n; ++i)
                        for (std::int64_t j = 0; j < pc.extent; ++j)
                            ga[i * pc.extent + j] += go[i * m + pc.off + j];
                }
            }
        });
    }
    return out;
}

// Row-wise softmax with an optional attend mask. Masked entries are exactly 0;
// rows with no unmasked entry yield an all-zero row.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x, const Mask* mask = nullptr) {
    detail::check_2d(x, "softmax_rows");
    const auto n = x.dim(0), m = x.dim(1);
    if (mask && (mask->rows != n || mask->cols != m)) {
        throw shape_error("softmax_rows: mask " + std::to_string(mask->rows) + "x" +
                          std::to_string(mask->cols) + " does not match " + shape_str(x.shape()));
    }
    Tensor<T> out({n, m});
    for (std::int64_t i = 0; i < n; ++i) {
        const T* xr = x.data() + i * m;
        T* yr = out.data() + i * m;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::int64_t j = 0; j < m; ++j) {
            if (mask && !mask->at(i, j)) continue;
            mx = std::max(mx, xr[j]);
        }
        if (mx == -std::numeric_limits<T>::infinity()) {
            for (std::int64_t j = 0; j < m; ++j) yr[j] = T(0);
            continue;
        }
        T sum = T(0);
        for (std::int64_t j = 0; j < m; ++j) {
            if (mask && !mask->at(i, j)) {
                yr[j] = T(0);
            } else {
                yr[j] = std::exp(xr[j] - mx);
                sum += yr[j];
            }
        }
        for (std::int64_t j = 0; j < m; ++j) yr[j] /= sum;
    }
    if (Tape<T>* tp = tape_of<T>({&x})) {
        const auto on = tp->new_node(out.numel());
        out.track(tp, on);
        const auto xn = x.node();
        auto ybuf = out.buffer();
        tp->set_backward(on, [=](Tape<T>& tape) {
            const auto& go = tape.grad_of(on);
            auto& gx = tape.grad_of(xn);
            for (std::int64_t i = 0; i < n; ++i) {
                const T* yr = ybuf->data() + i * m;
                T dot = T(0);
                for (std::int64_t j = 0; j < m; ++j) dot += go[i * m + j] * yr[j];
                for (std::int64_t j = 0; j < m; ++j)
                    gx[i * m + j] += yr[j] * (go[i * m + j] - dot);
            }
        });
    }
    return out;
}

// y = x / sqrt(mean(x^2) + eps) * weight, per row.
template <typename T>
Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& weight, T eps) {
    detail::check_2d(x, "rms_norm");
    const auto n = x.dim(0), d = x.dim(1);
    if (weight.numel() != d) {
        throw shape_error("rms_norm: weight " + shape_str(weight.shape()) +
                          " does not match trailing dim of " + shape_str(x.shape()));
    }
    Tensor<T> out({n, d});
    for (std::int64_t i = 0; i < n; ++i) {
        const T* xr = x.data() + i * d;
        T ms = T(0);
        for (std::int64_t j = 0; j < d; ++j) ms += xr[j] * xr[j];
        ms /= static_cast<T>(d);
        const T r = T(1) / std::sqrt(ms + eps);
        for (std::int64_t j = 0; j < d; ++j) out.data()[i * d + j] = xr[j] * r * weight.data()[j];
    }
    if (Tape<T>* tp = tape_of<T>({&x, &weight})) {
        const auto on = tp->new_node(out.numel());
        out.track(tp, on);
        const auto xn = x.tracked() ? x.node() : -1;
        const auto wn = weight.tracked() ? weight.node() : -1;
        auto xbuf = x.buffer();
        auto wbuf = weight.buffer();
        tp->set_backward(on, [=](Tape<T>& tape) {
            const auto& go = tape.grad_of(on);
            for (std::int64_t i = 0; i < n; ++i) {
                const T* xr = xbuf->data() + i * d;
                const T* w = wbuf->data();
                T ms = T(0);
                for (std::int64_t j = 0; j < d; ++j) ms += xr[j] * xr[j];
                ms /= static_cast<T>(d);
                const T r = T(1) / std::sqrt(ms + eps);
                if (xn >= 0) {
                    auto& gx = tape.grad_of(xn);
                    T dot = T(0);
                    for (std::int64_t j = 0; j < d; ++j) dot += go[i * d + j] * w[j] * xr[j];
                    const T c = r * r * r * dot / static_cast<T>(d);
                    for (std::int64_t j = 0; j < d; ++j)
                        gx[i * d + j] += go[i * d + j] * w[j] * r - c * xr[j];
                }
                if (wn >= 0) {
                    auto& gw = tape.grad_of(wn);
                    for (std::int64_t j = 0; j < d; ++j) gw[j] += go[i * d + j] * xr[j] * r;
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    const auto n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        const T v = x.data()[i];
        out.data()[i] = v / (T(1) + std::exp(-v));
    }
    if (Tape<T>* tp = tape_of<T>({&x})) {
        const auto on = tp->new_node(n);
        out.track(tp, on);
        const auto xn = x.node();
        auto xbuf = x.buffer();
        tp->set_backward(on, [=](Tape<T>& tape) {
            const auto& go = tape.grad_of(on);
            auto& gx = tape.grad_of(xn);
            for (std::int64_t i = 0; i < n; ++i) {
                const T v = (*xbuf)[i];
                const T s = T(1) / (T(1) + std::exp(-v));
                gx[i] += go[i] * s * (T(1) + v * (T(1) - s));
            }
        });
    }
    return out;
}

// W_down(silu(x W_gate) * (x W_up))
template <typename T>
Tensor<T> swiglu(const Tensor<T>& x, const Tensor<T>& w_gate, const Tensor<T>& w_up,
                 const Tensor<T>& w_down) {
    return matmul(mul(silu(matmul(x, w_gate)), matmul(x, w_up)), w_down);
}

// Rotates consecutive dimension pairs of each head by position-dependent
// angles: pair p of a head turns by pos * base^(-2p/head_dim).
template <typename T>
Tensor<T> rope(const Tensor<T>& x, int head_dim, const std::vector<std::int64_t>& positions,
               double base) {
    detail::check_2d(x, "rope");
    const auto n = x.dim(0), dtot = x.dim(1);
    if (head_dim <= 0 || head_dim % 2 != 0 || dtot % head_dim != 0) {
        throw shape_error("rope: head_dim " + std::to_string(head_dim) + " incompatible with " +
                          shape_str(x.shape()));
    }
    if (static_cast<std::int64_t>(positions.size()) != n) {
        throw shape_error("rope: " + std::to_string(positions.size()) + " positions for " +
                          std::to_string(n) + " rows");
    }
    for (auto p : positions) {
        if (p < 0) throw data_error("rope: negative position");
    }
    Tensor<T> out({n, dtot});
    detail::rope_rotate(x.data(), out.data(), false, n, dtot, head_dim, positions, base);
    if (Tape<T>* tp = tape_of<T>({&x})) {
        const auto on = tp->new_node(out.numel());
        out.track(tp, on);
        const auto xn = x.node();
        const std::vector<std::int64_t> pos_copy = positions;
        tp->set_backward(on, [=](Tape<T>& tape) {
            const auto& go = tape.grad_of(on);
            auto& gx = tape.grad_of(xn);
            std::vector<T> tmp(go.size());
            detail::rope_rotate(go.data(), tmp.data(), true, n, dtot, head_dim, pos_copy, base);
            for (size_t i = 0; i < tmp.size(); ++i) gx[i] += tmp[i];
        });
    }
    return out;
}

// Gather of embedding rows.
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, const std::vector<std::int32_t>& ids) {
    detail::check_2d(table, "embedding");
    const auto v = table.dim(0), d = table.dim(1);
    const auto n = static_cast<std::int64_t>(ids.size());
    for (std::int64_t i = 0; i < n; ++i) {
        if (ids[static_cast<size_t>(i)] < 0 || ids[static_cast<size_t>(i)] >= v) {
            throw data_error("embedding: token id " + std::to_string(ids[static_cast<size_t>(i)]) +
                             " at offset " + std::to_string(i) + " outside vocabulary of " +
                             std::to_string(v));
        }
    }
    Tensor<T> out({n, d});
    for (std::int64_t i = 0; i < n; ++i) {
        const auto id = static_cast<std::int64_t>(ids[static_cast<size_t>(i)]);
        std::copy(table.data() + id * d, table.data() + (id + 1) * d, out.data() + i * d);
    }
    if (Tape<T>* tp = tape_of<T>({&table})) {
        const auto on = tp->new_node(out.numel());
        out.track(tp, on);
        const auto tn = table.node();
        tp->set_backward(on, [=](Tape<T>& tape) {
            const auto& go = tape.grad_of(on);
            auto& gt = tape.grad_of(tn);
            for (std::int64_t i = 0; i < n; ++i) {
                const auto id = static_cast<std::int64_t>(ids[static_cast<size_t>(i)]);
                for (std::int64_t j = 0; j < d; ++j) gt[id * d + j] += go[i * d + j];
            }
        });
    }
    return out;
}

// Mean next-token negative log-likelihood over all rows.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::int32_t>& targets) {
    detail::check_2d(logits, "cross_entropy");
    const auto n = logits.dim(0), v = logits.dim(1);
    if (static_cast<std::int64_t>(targets.size()) != n) {
        throw shape_error("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                          std::to_string(n) + " rows");
    }
    for (std::int64_t i = 0; i < n; ++i) {
        if (targets[static_cast<size_t>(i)] < 0 || targets[static_cast<size_t>(i)] >= v) {
            throw data_error("cross_entropy: target id " +
                             std::to_string(targets[static_cast<size_t>(i)]) + " at offset " +
                             std::to_string(i) + " outside vocabulary of " + std::to_string(v));
        }
    }
    Tensor<T> out({1});
    T total = T(0);
    std::vector<T> lse(static_cast<size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const T* row = logits.data() + i * v;
        T mx = row[0];
        for (std::int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        T sum = T(0);
        for (std::int64_t j = 0; j < v; ++j) sum += std::exp(row[j] - mx);
        lse[static_cast<size_t>(i)] = mx + std::log(sum);
        total += lse[static_cast<size_t>(i)] - row[targets[static_cast<size_t>(i)]];
    }
    out.data()[0] = total / static_cast<T>(n);
    if (Tape<T>* tp = tape_of<T>({&logits})) {
        const auto on = tp->new_node(1);
        out.track(tp, on);
        const auto ln = logits.node();
        auto lbuf = logits.buffer();
        tp->set_backward(on, [=](Tape<T>& tape) {
            const T g = tape.grad_of(on)[0] / static_cast<T>(n);
            auto& gl = tape.grad_of(ln);
            for (std::int64_t i = 0; i < n; ++i) {
                const T* row = lbuf->data() + i * v;
                for (std::int64_t j = 0; j < v; ++j) {
                    T p = std::exp(row[j] - lse[static_cast<size_t>(i)]);
                    if (j == targets[static_cast<size_t>(i)]) p -= T(1);
                    gl[i * v + j] += g * p;
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    Tensor<T> out({1});
    T total = T(0);
    for (std::int64_t i = 0; i < x.numel(); ++i) total += x.data()[i];
    out.data()[0] = total;
    if (Tape<T>* tp = tape_of<T>({&x})) {
        const auto on = tp->new_node(1);
        out.track(tp, on);
        const auto xn = x.node();
        const auto n = x.numel();
        tp->set_backward(on, [=](Tape<T>& tape) {
            const T g = tape.grad_of(on)[0];
            auto& gx = tape.grad_of(xn);
            for (std::int64_t i = 0; i < n; ++i) gx[i] += g;
        });
    }
    return out;
}

} // namespace xlkv
