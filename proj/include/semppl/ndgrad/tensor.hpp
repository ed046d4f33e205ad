#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "semppl/error.hpp"

namespace semppl::ndgrad {

using Shape = std::vector<std::size_t>;
using NodeId = std::size_t;

inline std::size_t element_count(const Shape& shape) noexcept {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

class Tape;
class Gradients;

/// Dense row-major array of doubles, optionally tracked on a Tape.
///
/// Values are immutable and shared between copies. A tensor that is tracked
/// remembers the tape pass (generation) it was recorded in; using it after
/// that pass has been consumed by backward() raises StaleTapeError.
class Tensor {
public:
    Tensor() : data_(std::make_shared<const std::vector<double>>(1, 0.0)) {}

    Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
        for (std::size_t e : shape_) {
            if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape_));
        }
        if (element_count(shape_) != values.size()) {
            throw DimensionError("shape " + shape_string(shape_) + " does not hold " + std::to_string(values.size()) +
                                 " values");
        }
        data_ = std::make_shared<const std::vector<double>>(std::move(values));
    }

    static Tensor scalar(double v) { return Tensor(Shape{}, {v}); }
    static Tensor zeros(Shape shape) { return filled(std::move(shape), 0.0); }
    static Tensor filled(Shape shape, double v) {
        const std::size_t n = element_count(shape);
        return Tensor(std::move(shape), std::vector<double>(n, v));
    }
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
        return Tensor(Shape{rows, cols}, std::move(values));
    }
    static Tensor vector(std::vector<double> values) {
        const std::size_t n = values.size();
        return Tensor(Shape{n}, std::move(values));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_->size(); }
    std::size_t extent(std::size_t axis) const {
        if (axis >= shape_.size()) throw DimensionError("axis out of range for shape " + shape_string(shape_));
        return shape_[axis];
    }
    std::size_t rows() const { return extent(0); }
    std::size_t cols() const { return extent(1); }

    std::span<const double> values() const noexcept { return {data_->data(), data_->size()}; }
    const std::vector<double>& storage() const noexcept { return *data_; }
    std::shared_ptr<const std::vector<double>> shared_storage() const noexcept { return data_; }
    std::vector<double> to_vector() const { return *data_; }

    double operator[](std::size_t i) const { return (*data_)[i]; }
    double at(std::size_t r, std::size_t c) const { return (*data_)[r * cols() + c]; }
    double item() const {
        if (size() != 1) throw RankError("item() on tensor of shape " + shape_string(shape_));
        return (*data_)[0];
    }

    bool requires_grad() const noexcept { return tape_ != nullptr; }
    std::optional<NodeId> node_id() const noexcept {
        if (!tape_) return std::nullopt;
        return node_;
    }
    Tape* tape() const noexcept { return tape_; }
    std::uint64_t generation() const noexcept { return generation_; }

    /// Same values, no longer tracked.
    Tensor detach() const {
        Tensor t = *this;
        t.tape_ = nullptr;
        t.node_ = 0;
        t.generation_ = 0;
        return t;
    }

    Tensor reshaped(Shape shape) const {
        if (element_count(shape) != size()) {
            throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
        }
        Tensor t = *this;
        t.shape_ = std::move(shape);
        return t;
    }

private:
    friend class Tape;

    Shape shape_;
    std::shared_ptr<const std::vector<double>> data_;
    Tape* tape_ = nullptr;
    std::uint64_t generation_ = 0;
    NodeId node_ = 0;
};

/// Gradients of one backward pass, keyed by leaf node id.
class Gradients {
public:
    Gradients() = default;
    Gradients(std::uint64_t generation, std::map<NodeId, Tensor> grads)
        : generation_(generation), grads_(std::move(grads)) {}

    bool contains(const Tensor& leaf) const {
        return leaf.node_id() && leaf.generation() == generation_ && grads_.count(*leaf.node_id()) > 0;
    }

    const Tensor& of(const Tensor& leaf) const {
        if (!leaf.node_id()) throw ContractError("gradient requested for an untracked tensor");
        if (leaf.generation() != generation_) throw StaleTapeError("gradient requested for a tensor of another pass");
        auto it = grads_.find(*leaf.node_id());
        if (it == grads_.end()) throw ContractError("tensor is not a leaf variable of this pass");
        return it->second;
    }

    std::size_t size() const noexcept { return grads_.size(); }
    const std::map<NodeId, Tensor>& entries() const noexcept { return grads_; }

private:
    std::uint64_t generation_ = 0;
    std::map<NodeId, Tensor> grads_;
};

/// Define-by-run gradient tape.
///
/// Operations are appended as they execute, so node order is already a
/// topological order; backward() walks it once in reverse. A tape pass ends
/// with backward(): nodes are dropped and every tensor of the pass becomes
/// stale. Not thread-safe; use one tape per thread.
class Tape {
public:
    /// grad_in[k] is null when input k is an untracked constant.
    using BackwardFn = std::function<void(std::span<const double> grad_out, std::span<std::vector<double>* const> grad_in)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Leaf that receives a gradient.
    Tensor variable(const Tensor& value) {
        Tensor t = value.detach();
        nodes_.push_back(Node{t.size(), {}, nullptr, true});
        attach(t, nodes_.size() - 1);
        return t;
    }

    /// Records the result of an operation. Returns an untracked tensor if no
    /// input is tracked.
    Tensor record(Shape shape, std::vector<double> values, std::initializer_list<const Tensor*> inputs,
                  BackwardFn backward) {
        Tensor out(std::move(shape), std::move(values));
        std::vector<std::optional<NodeId>> ids;
        ids.reserve(inputs.size());
        for (const Tensor* in : inputs) ids.push_back(in->node_id());
        nodes_.push_back(Node{out.size(), std::move(ids), std::move(backward), false});
        attach(out, nodes_.size() - 1);
        return out;
    }

    Gradients backward(const Tensor& loss) {
        if (loss.tape_ != this) throw ContractError("loss is not recorded on this tape");
        if (loss.generation_ != generation_) throw StaleTapeError("backward() on a consumed tape pass; run a new forward");
        if (loss.size() != 1 || loss.rank() != 0) {
            throw RankError("backward() needs a scalar loss, got shape " + shape_string(loss.shape()));
        }
        std::vector<std::vector<double>> grads(loss.node_ + 1);
        grads[loss.node_].assign(1, 1.0);
        std::vector<std::vector<double>*> slots;
        for (std::size_t i = loss.node_ + 1; i-- > 0;) {
            Node& node = nodes_[i];
            if (grads[i].empty() || node.leaf) continue;
            slots.assign(node.inputs.size(), nullptr);
            for (std::size_t k = 0; k < node.inputs.size(); ++k) {
                if (!node.inputs[k]) continue;
                const NodeId in = *node.inputs[k];
                if (grads[in].empty()) grads[in].assign(nodes_[in].numel, 0.0);
                slots[k] = &grads[in];
            }
            node.backward(grads[i], slots);
            // Interior gradients are not needed once propagated.
            std::vector<double>().swap(grads[i]);
        }
        std::map<NodeId, Tensor> out;
        for (NodeId i = 0; i < nodes_.size(); ++i) {
            if (!nodes_[i].leaf) continue;
            std::vector<double> g = i < grads.size() && !grads[i].empty() ? std::move(grads[i])
                                                                          : std::vector<double>(nodes_[i].numel, 0.0);
            out.emplace(i, Tensor(leaf_shapes_.at(i), std::move(g)));
        }
        Gradients result(generation_, std::move(out));
        clear();
        return result;
    }

    /// Drops all nodes without computing gradients.
    void clear() {
        nodes_.clear();
        leaf_shapes_.clear();
        ++generation_;
    }

    std::size_t size() const noexcept { return nodes_.size(); }
    std::uint64_t generation() const noexcept { return generation_; }

private:
    struct Node {
        std::size_t numel;
        std::vector<std::optional<NodeId>> inputs;
        BackwardFn backward;
        bool leaf;
    };

    void attach(Tensor& t, NodeId id) {
        t.tape_ = this;
        t.node_ = id;
        t.generation_ = generation_;
        if (nodes_[id].leaf) leaf_shapes_.emplace(id, t.shape());
    }

    std::vector<Node> nodes_;
    std::map<NodeId, Shape> leaf_shapes_;
    std::uint64_t generation_ = 1;
};

namespace detail {

/// The tape shared by all tracked inputs, or null if every input is constant.
inline Tape* common_tape(std::initializer_list<const Tensor*> inputs) {
    Tape* tape = nullptr;
    for (const Tensor* t : inputs) {
        if (!t->tape()) continue;
        if (t->generation() != t->tape()->generation()) {
            throw StaleTapeError("tensor belongs to a tape pass already consumed by backward()");
        }
        if (tape && tape != t->tape()) throw ContractError("operation mixes tensors from different tapes");
        tape = t->tape();
    }
    return tape;
}

/// Builds the op result: tracked if any input is tracked, constant otherwise.
inline Tensor make_result(Shape shape, std::vector<double> values, std::initializer_list<const Tensor*> inputs,
                          Tape::BackwardFn backward) {
    Tape* tape = common_tape(inputs);
    if (!tape) return Tensor(std::move(shape), std::move(values));
    return tape->record(std::move(shape), std::move(values), inputs, std::move(backward));
}

}  // namespace detail

}  // namespace semppl::ndgrad
