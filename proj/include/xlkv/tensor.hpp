#pragma once

#include <cstdint>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "xlkv/errors.hpp"

namespace xlkv {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << "x";
        os << s[i];
    }
    os << ")";
    return os.str();
}

template <typename T>
class Tape;

// Dense row-major tensor. Copies are shallow (shared buffer); buffers are
// treated as immutable once an op has consumed them, except for parameter
// updates which happen outside any live tape.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape)
        : shape_(std::move(shape)),
          buf_(std::make_shared<std::vector<T>>(static_cast<size_t>(shape_numel(shape_)), T(0))) {}

    Tensor(Shape shape, std::shared_ptr<std::vector<T>> buf)
        : shape_(std::move(shape)), buf_(std::move(buf)) {
        if (static_cast<std::int64_t>(buf_->size()) != shape_numel(shape_)) {
            throw shape_error("buffer of " + std::to_string(buf_->size()) +
                              " elements does not match shape " + shape_str(shape_));
        }
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor from(Shape shape, std::vector<T> values) {
        if (static_cast<std::int64_t>(values.size()) != shape_numel(shape)) {
            throw shape_error("value list of " + std::to_string(values.size()) +
                              " elements does not match shape " + shape_str(shape));
        }
        return Tensor(std::move(shape), std::make_shared<std::vector<T>>(std::move(values)));
    }

    bool defined() const { return buf_ != nullptr; }
    const Shape& shape() const { return shape_; }
    std::int64_t dim(size_t i) const { return shape_[i]; }
    size_t ndim() const { return shape_.size(); }
    std::int64_t numel() const { return shape_numel(shape_); }

    T* data() { return buf_->data(); }
    const T* data() const { return buf_->data(); }
    const std::shared_ptr<std::vector<T>>& buffer() const { return buf_; }

    T item() const {
        if (numel() != 1) throw shape_error("item() on tensor of shape " + shape_str(shape_));
        return (*buf_)[0];
    }

    // Autodiff bookkeeping; node < 0 means untracked.
    Tape<T>* tape() const { return tape_; }
    std::int64_t node() const { return node_; }
    bool tracked() const { return tape_ != nullptr && node_ >= 0; }
    void track(Tape<T>* tape, std::int64_t node) {
        tape_ = tape;
        node_ = node;
    }
    void untrack() {
        tape_ = nullptr;
        node_ = -1;
    }

    // Same storage and shape, no tape history.
    Tensor detached() const {
        Tensor t;
        t.shape_ = shape_;
        t.buf_ = buf_;
        return t;
    }

private:
    Shape shape_;
    std::shared_ptr<std::vector<T>> buf_;
    Tape<T>* tape_ = nullptr;
    std::int64_t node_ = -1;
};

// Boolean attention mask over a (rows x cols) score matrix; true = attend.
struct Mask {
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    std::vector<std::uint8_t> allow;

    bool at(std::int64_t r, std::int64_t c) const {
        return allow[static_cast<size_t>(r * cols + c)] != 0;
    }
    void set(std::int64_t r, std::int64_t c, bool v) {
        allow[static_cast<size_t>(r * cols + c)] = v ? 1 : 0;
    }

    static Mask all(std::int64_t rows, std::int64_t cols, bool v = true) {
        Mask m;
        m.rows = rows;
        m.cols = cols;
        m.allow.assign(static_cast<size_t>(rows * cols), v ? 1 : 0);
        return m;
    }

    // Rows are query positions past..past+rows-1, columns absolute positions
    // 0..cols-1: row r may attend to columns <= past + r.
    static Mask causal(std::int64_t rows, std::int64_t cols, std::int64_t past) {
        Mask m = all(rows, cols, false);
        for (std::int64_t r = 0; r < rows; ++r) {
            const std::int64_t limit = past + r;
            for (std::int64_t c = 0; c < cols && c <= limit; ++c) m.set(r, c, true);
        }
        return m;
    }

    // Removes each query's own column (column index == absolute query position).
    void mask_diagonal(std::int64_t past) {
        for (std::int64_t r = 0; r < rows; ++r) {
            const std::int64_t self = past + r;
            if (self < cols) set(r, self, false);
        }
    }
};

} // namespace xlkv
