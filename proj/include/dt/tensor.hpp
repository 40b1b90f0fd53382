#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dt/error.hpp"
#include "dt/rng.hpp"

namespace dt {

using Shape = std::vector<int>;

inline long shape_numel(const Shape& s) {
    long n = 1;
    for (int e : s) {
        if (e <= 0) throw ShapeError("tensor extents must be positive");
        n *= e;
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

template <class Real>
struct TensorImpl {
    Shape shape;
    std::vector<Real> values;
    std::vector<Real> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::uint64_t id = 0;

    long numel() const { return static_cast<long>(values.size()); }

    void ensure_grad() {
        if (grad.empty()) grad.assign(values.size(), Real(0));
    }
};

inline std::uint64_t next_tensor_id() {
    static std::uint64_t counter = 0;  // single-threaded graph construction
    return ++counter;
}

// Dense row-major tensor handle. Copies share the underlying buffer; the tape
// holds handles to keep intermediate results alive for the backward pass.
template <class Real>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape) {
        Tensor t;
        t.impl_ = std::make_shared<TensorImpl<Real>>();
        t.impl_->shape = std::move(shape);
        t.impl_->values.assign(static_cast<size_t>(shape_numel(t.impl_->shape)), Real(0));
        t.impl_->id = next_tensor_id();
        return t;
    }

    static Tensor full(Shape shape, Real v) {
        Tensor t = zeros(std::move(shape));
        for (auto& x : t.impl_->values) x = v;
        return t;
    }

    static Tensor scalar(Real v) { return full({1}, v); }

    static Tensor from(Shape shape, std::vector<Real> vals) {
        Tensor t;
        t.impl_ = std::make_shared<TensorImpl<Real>>();
        if (static_cast<long>(vals.size()) != shape_numel(shape))
            throw ShapeError("value count " + std::to_string(vals.size()) +
                             " does not match shape " + shape_str(shape));
        t.impl_->shape = std::move(shape);
        t.impl_->values = std::move(vals);
        t.impl_->id = next_tensor_id();
        return t;
    }

    static Tensor randn(Shape shape, Rng& rng, Real stddev = Real(1)) {
        Tensor t = zeros(std::move(shape));
        for (auto& x : t.impl_->values) x = static_cast<Real>(rng.normal()) * stddev;
        return t;
    }

    // uniform in [-limit, limit]
    static Tensor rand_uniform(Shape shape, Rng& rng, Real limit) {
        Tensor t = zeros(std::move(shape));
        for (auto& x : t.impl_->values) x = static_cast<Real>(rng.uniform(-double(limit), double(limit)));
        return t;
    }

    bool defined() const { return impl_ != nullptr; }

    const Shape& shape() const { return impl_->shape; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
    long numel() const { return impl_->numel(); }
    std::uint64_t id() const { return impl_->id; }

    std::span<Real> values() { return {impl_->values.data(), impl_->values.size()}; }
    std::span<const Real> values() const { return {impl_->values.data(), impl_->values.size()}; }

    bool has_grad() const { return !impl_->grad.empty(); }
    std::span<Real> grad() {
        impl_->ensure_grad();
        return {impl_->grad.data(), impl_->grad.size()};
    }
    std::span<const Real> grad() const {
        const_cast<TensorImpl<Real>*>(impl_.get())->ensure_grad();
        return {impl_->grad.data(), impl_->grad.size()};
    }
    void zero_grad() {
        if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), Real(0));
    }

    Tensor& set_requires_grad(bool v) {
        impl_->requires_grad = v;
        return *this;
    }
    bool requires_grad() const { return impl_ && impl_->requires_grad; }

    Real item() const {
        if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
        return impl_->values[0];
    }

    Real at(std::initializer_list<int> idx) const {
        if (static_cast<int>(idx.size()) != rank()) throw BoundsError("index rank mismatch");
        long off = 0;
        int k = 0;
        for (int i : idx) {
            if (i < 0 || i >= impl_->shape[static_cast<size_t>(k)]) throw BoundsError("index out of range");
            off = off * impl_->shape[static_cast<size_t>(k)] + i;
            ++k;
        }
        return impl_->values[static_cast<size_t>(off)];
    }

    std::shared_ptr<TensorImpl<Real>> impl() const { return impl_; }

private:
    std::shared_ptr<TensorImpl<Real>> impl_;
};

// Reverse-mode tape. Ops push one node each; backward replays the node list in
// reverse, which is a valid topological order because inputs are recorded
// before their consumers.
template <class Real>
class Tape {
public:
    struct Node {
        const char* op;
        std::vector<std::shared_ptr<TensorImpl<Real>>> inputs;
        std::shared_ptr<TensorImpl<Real>> output;
        std::function<void()> backward;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape*& current() {
        thread_local Tape* cur = nullptr;
        return cur;
    }

    void record(const char* op, std::vector<std::shared_ptr<TensorImpl<Real>>> inputs,
                std::shared_ptr<TensorImpl<Real>> output, std::function<void()> backward) {
        nodes_.push_back(Node{op, std::move(inputs), std::move(output), std::move(backward)});
    }

    size_t size() const { return nodes_.size(); }
    const Node& node(size_t i) const { return nodes_[i]; }

    // Populates dLoss/dLeaf for every requires_grad tensor reachable from
    // loss. Leaves never touched keep (or lazily get) zero gradients.
    void backward(const Tensor<Real>& loss) {
        if (loss.numel() != 1) throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
        bool on_tape = loss.requires_grad();
        for (const auto& n : nodes_) {
            if (n.output == loss.impl()) {
                on_tape = true;
                break;
            }
        }
        if (!on_tape) throw ContractError("backward: loss is not on the tape");
        loss.impl()->ensure_grad();
        loss.impl()->grad[0] += Real(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            if (it->output->grad.empty()) continue;  // nothing flowed into this node
            it->backward();
        }
    }

private:
    std::vector<Node> nodes_;
};

// RAII activation; at most one tape is live per thread.
template <class Real>
class TapeScope {
public:
    explicit TapeScope(Tape<Real>& tape) {
        if (Tape<Real>::current() != nullptr) throw ContractError("nested tape scopes are not supported");
        Tape<Real>::current() = &tape;
    }
    ~TapeScope() { Tape<Real>::current() = nullptr; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;
};

// True when an op whose inputs include a requires_grad tensor should record.
template <class Real>
inline bool taping() {
    return Tape<Real>::current() != nullptr;
}

}  // namespace dt
