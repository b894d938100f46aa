#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dfip/tensor.hpp"

namespace dfip {

/// Trainable array with its accumulated gradient.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor gradient;

    Parameter() = default;
    Parameter(std::string name_, Tensor value_)
        : name(std::move(name_)), value(std::move(value_)), gradient(value.shape()) {}

    void zero_grad() { gradient.fill(0.0f); }
};

class Tape;

namespace detail {

struct Node {
    Tensor value;
    Tensor grad; // allocated on first accumulation
    bool requires_grad = false;
    std::function<void()> backward;

    void accumulate(const Tensor& g);
    /// Gradient buffer, allocated (zeroed) if absent.
    Tensor& grad_buffer();
};

} // namespace detail

/// Handle to a value produced by a primitive. Copies share the node.
///
/// A Var without a tape is a constant: primitives applied only to constants
/// compute values and record nothing.
class Var {
public:
    Var() = default;
    static Var constant(Tensor value);

    const Tensor& value() const { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    Tape* tape() const noexcept { return tape_; }
    bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
    explicit operator bool() const noexcept { return static_cast<bool>(node_); }

    // Used by primitive implementations.
    const std::shared_ptr<detail::Node>& node() const noexcept { return node_; }
    Var(std::shared_ptr<detail::Node> node, Tape* tape) : node_(std::move(node)), tape_(tape) {}

private:
    std::shared_ptr<detail::Node> node_;
    Tape* tape_ = nullptr;
};

/// Ordered record of executed primitives for one forward pass.
///
/// backward() replays the recorded closures in reverse execution order and
/// leaves dloss/dvalue summed into every bound Parameter's gradient. A tape
/// supports exactly one backward pass.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Leaf bound to `p`; gradients flow into p.gradient on backward.
    Var bind(Parameter& p);

    /// Leaf that participates in the graph but receives no parameter update.
    Var input(Tensor value, bool requires_grad = false);

    void backward(const Var& loss);

    std::size_t size() const noexcept { return nodes_.size(); }
    bool consumed() const noexcept { return consumed_; }

    /// Registers a node produced by a primitive. Internal.
    Var record(std::shared_ptr<detail::Node> node);

private:
    std::vector<std::shared_ptr<detail::Node>> nodes_;
    bool consumed_ = false;
};

/// Binds `p` on `tape` when training, otherwise wraps a constant copy.
Var bind_or_constant(Tape* tape, Parameter& p);

} // namespace dfip
