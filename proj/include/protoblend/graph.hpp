#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "protoblend/tensor.hpp"

namespace protoblend {

// A trainable tensor with its gradient accumulator. Owned by a model or test;
// graphs only hold pointers to it for the lifetime of one forward/backward.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(Tensor::like(value)) {}

  void zero_grad() { grad = Tensor::like(value); }
};

class Graph;

// Lightweight handle to a node of a Graph.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
};

// Adjoint of one recorded op. `upstream` is dL/d(output) and `output` the
// forward value; `input_grads[i]` points at the accumulator of input i, or is
// null when input i does not require a gradient. Implementations add into the
// accumulators, never assign.
using Adjoint =
    std::function<void(const Tensor& upstream, const Tensor& output, std::span<Tensor* const> input_grads)>;

// Reverse-mode tape over a fixed vocabulary of ops. Ops are appended in
// execution order, which is already a topological order; backward walks the
// record once in reverse.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor value, bool requires_grad = true);
  // Leaf bound to a parameter; backward adds the node gradient into p.grad.
  Var param(Parameter& p);

  // Creates the output node; records the op only when some input requires
  // grad. Checks the output for NaN/Inf. Node storage is address-stable, so
  // adjoints may capture input values by reference.
  Var record(std::string_view op_name, Tensor output, std::vector<Var> inputs, Adjoint adjoint);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  // Gradient of a leaf after backward(); zeros if it was never reached.
  Tensor grad(Var v) const;

  void backward(Var loss);

  std::size_t op_count() const { return ops_.size(); }
  std::size_t node_count() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // empty until reached in backward
    bool requires_grad = false;
    Parameter* param = nullptr;
  };
  struct Op {
    std::string name;
    std::size_t output;
    std::vector<std::size_t> inputs;
    Adjoint adjoint;
  };

  Var make_node(Tensor value, bool requires_grad, Parameter* param);
  Tensor& grad_buffer(std::size_t id);

  std::deque<Node> nodes_;
  std::vector<Op> ops_;
  bool consumed_ = false;
};

}  // namespace protoblend
