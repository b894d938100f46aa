#include "dfip/autograd.hpp"

#include "dfip/error.hpp"

namespace dfip {

namespace detail {

Tensor& Node::grad_buffer() {
    if (grad.empty()) grad = Tensor(value.shape());
    return grad;
}

void Node::accumulate(const Tensor& g) {
    if (!requires_grad) return;
    require_same_shape(value, g, "gradient accumulation");
    if (grad.empty()) {
        grad = g;
        return;
    }
    float* dst = grad.data();
    const float* src = g.data();
    for (std::size_t i = 0; i < g.numel(); ++i) dst[i] += src[i];
}

} // namespace detail

Var Var::constant(Tensor value) {
    auto node = std::make_shared<detail::Node>();
    node->value = std::move(value);
    return Var(std::move(node), nullptr);
}

Var Tape::record(std::shared_ptr<detail::Node> node) {
    if (consumed_) throw StateError("tape already consumed by backward; start a new forward pass");
    nodes_.push_back(node);
    return Var(std::move(node), this);
}

Var Tape::bind(Parameter& p) {
    auto node = std::make_shared<detail::Node>();
    node->value = p.value;
    node->requires_grad = true;
    detail::Node* self = node.get();
    Parameter* param = &p;
    node->backward = [self, param] {
        require_same_shape(param->gradient, self->grad, "parameter gradient");
        float* dst = param->gradient.data();
        const float* src = self->grad.data();
        for (std::size_t i = 0; i < self->grad.numel(); ++i) dst[i] += src[i];
    };
    return record(std::move(node));
}

Var Tape::input(Tensor value, bool requires_grad) {
    auto node = std::make_shared<detail::Node>();
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    return record(std::move(node));
}

void Tape::backward(const Var& loss) {
    if (consumed_) throw StateError("backward already ran on this tape; run a new forward pass first");
    if (!loss || loss.tape() != this) throw StateError("loss was not recorded on this tape");
    if (loss.value().numel() != 1) throw ShapeError("backward requires a scalar loss, got " + shape_str(loss.shape()));
    consumed_ = true;
    if (loss.requires_grad()) {
        loss.node()->grad_buffer().fill(1.0f);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            auto& node = **it;
            if (node.backward && !node.grad.empty()) node.backward();
        }
    }
    // Closures hold their inputs; dropping the nodes releases every activation.
    nodes_.clear();
}

Var bind_or_constant(Tape* tape, Parameter& p) {
    return tape ? tape->bind(p) : Var::constant(p.value);
}

} // namespace dfip
