#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "xlkv/tensor.hpp"

namespace xlkv {

// Reverse-mode tape. Nodes are appended in execution order, so reverse id
// order is a valid reverse-topological order. A training step owns one tape;
// reset() reuses the storage for the next step.
template <typename T>
class Tape {
public:
    using BackwardFn = std::function<void(Tape<T>&)>;

    struct Node {
        std::int64_t out_size = 0;
        BackwardFn backward; // empty for leaves
    };

    std::int64_t new_node(std::int64_t out_size) {
        nodes_.push_back(Node{out_size, nullptr});
        return static_cast<std::int64_t>(nodes_.size()) - 1;
    }

    void set_backward(std::int64_t node, BackwardFn fn) {
        nodes_[static_cast<size_t>(node)].backward = std::move(fn);
    }

    std::int64_t size() const { return static_cast<std::int64_t>(nodes_.size()); }

    bool recording() const { return pause_depth_ == 0; }
    void pause() { ++pause_depth_; }
    void resume() { --pause_depth_; }

    // Nodes created before the boundary receive no gradient: backward neither
    // calls their backward fn nor keeps their accumulated grads.
    void set_boundary() { boundary_ = size(); }
    std::int64_t boundary() const { return boundary_; }

    // Registers a leaf so gradients accumulate for it.
    void watch(Tensor<T>& t) {
        if (t.tape() == this && t.node() >= 0) return;
        t.track(this, new_node(t.numel()));
    }

    std::vector<T>& grad_of(std::int64_t node) {
        auto& g = grads_[static_cast<size_t>(node)];
        if (g.empty()) g.assign(static_cast<size_t>(nodes_[static_cast<size_t>(node)].out_size), T(0));
        return g;
    }

    bool has_grad(std::int64_t node) const {
        return !grads_[static_cast<size_t>(node)].empty();
    }

    // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse order. When
    // `visited` is given, it receives the ids whose backward fn fired.
    void backward(const Tensor<T>& loss, std::vector<std::int64_t>* visited = nullptr) {
        if (!loss.tracked() || loss.tape() != this) {
            throw state_error("backward: loss is not tracked on this tape");
        }
        if (loss.numel() != 1) {
            throw shape_error("backward: loss must be scalar, got " + shape_str(loss.shape()));
        }
        grads_.assign(nodes_.size(), {});
        grad_of(loss.node())[0] = T(1);
        for (std::int64_t id = loss.node(); id >= 0; --id) {
            auto& node = nodes_[static_cast<size_t>(id)];
            if (grads_[static_cast<size_t>(id)].empty()) continue;
            if (id < boundary_) {
                grads_[static_cast<size_t>(id)].clear();
                continue;
            }
            if (node.backward) {
                node.backward(*this);
                if (visited) visited->push_back(id);
            }
        }
    }

    // Gradient of a watched/output tensor after backward(); zeros if none.
    std::vector<T> grad(const Tensor<T>& t) {
        if (!t.tracked() || t.tape() != this) {
            throw state_error("grad: tensor is not tracked on this tape");
        }
        const auto& g = grads_[static_cast<size_t>(t.node())];
        if (g.empty()) return std::vector<T>(static_cast<size_t>(t.numel()), T(0));
        return g;
    }

    void reset() {
        nodes_.clear();
        grads_.clear();
        boundary_ = 0;
    }

private:
    std::vector<Node> nodes_;
    std::vector<std::vector<T>> grads_;
    std::int64_t boundary_ = 0;
    int pause_depth_ = 0;
};

// Suspends recording: ops executed in scope produce untracked tensors.
template <typename T>
class NoGradGuard {
public:
    explicit NoGradGuard(Tape<T>* tape) : tape_(tape) {
        if (tape_) tape_->pause();
    }
    ~NoGradGuard() {
        if (tape_) tape_->resume();
    }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    Tape<T>* tape_;
};

} // namespace xlkv
