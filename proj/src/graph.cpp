#include "protoblend/graph.hpp"

#include <stdexcept>

namespace protoblend {

const Tensor& Var::value() const { return graph->value(*this); }
bool Var::requires_grad() const { return graph->requires_grad(*this); }

Var Graph::make_node(Tensor value, bool requires_grad, Parameter* param) {
  nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, param});
  return Var{this, nodes_.size() - 1};
}

Var Graph::constant(Tensor value) { return make_node(std::move(value), false, nullptr); }

Var Graph::leaf(Tensor value, bool requires_grad) { return make_node(std::move(value), requires_grad, nullptr); }

Var Graph::param(Parameter& p) { return make_node(p.value, true, &p); }

Var Graph::record(std::string_view op_name, Tensor output, std::vector<Var> inputs, Adjoint adjoint) {
  output.check_finite(op_name);
  bool any = false;
  for (const Var& in : inputs) {
    if (in.graph != this) throw std::invalid_argument(std::string(op_name) + ": input from another graph");
    any = any || nodes_[in.id].requires_grad;
  }
  Var out = make_node(std::move(output), any, nullptr);
  if (any) {
    if (consumed_) throw std::logic_error("graph already consumed by backward()");
    Op op{std::string(op_name), out.id, {}, std::move(adjoint)};
    op.inputs.reserve(inputs.size());
    for (const Var& in : inputs) op.inputs.push_back(in.id);
    ops_.push_back(std::move(op));
  }
  return out;
}

Tensor& Graph::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor::like(n.value);
  return n.grad;
}

Tensor Graph::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  return n.grad.empty() ? Tensor::like(n.value) : n.grad;
}

void Graph::backward(Var loss) {
  if (consumed_) throw std::logic_error("backward() called twice on the same graph");
  if (ops_.empty()) throw std::logic_error("backward() on an empty op graph");
  Node& root = nodes_.at(loss.id);
  if (root.value.numel() != 1) throw std::invalid_argument("backward() requires a scalar loss");
  if (!root.requires_grad) throw std::invalid_argument("loss does not depend on any differentiable input");
  consumed_ = true;
  grad_buffer(loss.id).fill(1.0);

  std::vector<Tensor*> slots;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    Node& out = nodes_[it->output];
    if (out.grad.empty()) continue;  // not on a path to the loss
    slots.assign(it->inputs.size(), nullptr);
    for (std::size_t i = 0; i < it->inputs.size(); ++i) {
      if (nodes_[it->inputs[i]].requires_grad) slots[i] = &grad_buffer(it->inputs[i]);
    }
    it->adjoint(out.grad, out.value, slots);
    out.grad = Tensor{};  // intermediate grads are not needed after propagation
  }
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    Node& n = nodes_[id];
    if (n.param == nullptr || n.grad.empty()) continue;
    require_same_shape(n.param->grad, n.grad, "parameter gradient");
    auto dst = n.param->grad.data();
    auto src = n.grad.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
}

}  // namespace protoblend
