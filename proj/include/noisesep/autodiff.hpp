// Copyright 2026 The noisesep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "noisesep/tensor.hpp"

namespace noisesep {

// A named trainable tensor. Gradients accumulate across backward() calls until
// zero_grad() is called.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros(value.shape())) {}

  void zero_grad() {
    for (auto& g : grad.vec()) g = 0.0;
  }
};

class Graph;

// Lightweight handle to a node inside a Graph.
struct Var {
  Graph* graph = nullptr;
  int32_t id = -1;
  bool valid() const { return graph != nullptr && id >= 0; }
};

// Reverse-mode tape. Primitive applications append nodes in execution order,
// which is by construction a topological order; backward() walks it in reverse
// from the loss node and finally accumulates leaf gradients into the bound
// Parameters. One Graph per forward pass, confined to one thread.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // --- Leaves ---------------------------------------------------------------
  Var constant(Tensor value);
  // Enters p.value as a leaf; memoized so each Parameter maps to one node.
  Var param(Parameter& p);
  // New constant leaf holding value(x); cuts gradient flow.
  Var detach(Var x);

  // --- Primitives -----------------------------------------------------------
  // x: [Cin, T], w: [Cout, Cin, k], b: [Cout] (optional) -> [Cout, L],
  // L = (T - k) / stride + 1.
  Var conv1d(Var x, Var w, Var b, int stride);
  // x: [Cin, L], w: [Cin, Cout, k], b: [Cout] (optional) -> [Cout, T],
  // T = (L - 1) * stride + k.
  Var conv1d_transpose(Var x, Var w, Var b, int stride);
  // x: [..., in], w: [in, out], b: [out] (optional) -> [..., out].
  Var affine(Var x, Var w, Var b);
  // a: [m, k] x b: [k, n] -> [m, n]; batched form [B, m, k] x [B, k, n].
  Var matmul(Var a, Var b);
  Var relu(Var x);
  // a: single-element slope tensor.
  Var prelu(Var x, Var a);
  Var sigmoid(Var x);
  Var tanh(Var x);
  // Normalization over the last axis; gain/bias sized to that axis.
  Var layer_norm(Var x, Var gain, Var bias, double eps);
  // Unit L2 norm along `axis`; vectors with norm below eps are divided by eps.
  Var l2_normalize(Var x, int axis, double eps);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var x, double c);
  Var add_scalar(Var x, double c);
  // Elementwise product with a single-element Var (gradient flows to both).
  Var scale_by(Var x, Var s);
  Var reduce_sum(Var x);   // -> [1]
  Var reduce_mean(Var x);  // -> [1]
  // [..., n] -> [...]; a 1-D input reduces to [1].
  Var sum_last(Var x);
  Var exp(Var x);
  Var log(Var x);
  Var clamp_min(Var x, double c);
  Var concat(const std::vector<Var>& xs, int axis);
  Var slice(Var x, int axis, int64_t start, int64_t stop);
  Var reshape(Var x, std::vector<int64_t> shape);
  Var transpose(Var x, int axis_a, int axis_b);
  // Selects rows along axis 0; backward scatter-adds.
  Var gather_rows(Var x, std::vector<int64_t> indices);
  Var softmax_last(Var x);
  Var log_softmax_last(Var x);

  // --- Introspection ----------------------------------------------------------
  const Tensor& value(Var v) const { return node(v).value; }
  const Tensor& grad(Var v) const;
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  const std::vector<int32_t>& inputs_of(Var v) const { return node(v).inputs; }
  bool is_leaf(Var v) const { return node(v).inputs.empty(); }
  size_t num_nodes() const { return nodes_.size(); }

  // Reverse pass from a scalar loss. Node gradients are recomputed from
  // scratch on every call; Parameter gradients accumulate.
  void backward(Var loss);

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily during backward
    bool requires_grad = false;
    std::vector<int32_t> inputs;
    std::function<void(Graph&, int32_t)> backward_fn;
    Parameter* bound_param = nullptr;
  };

  Var push(Tensor value, bool requires_grad, std::vector<int32_t> inputs,
           std::function<void(Graph&, int32_t)> backward_fn, const char* op_name);
  const Node& node(Var v) const;
  Node& node(Var v);
  Node& node_at(int32_t id) { return nodes_[static_cast<size_t>(id)]; }
  // Gradient buffer of node `id`, zero-allocated on first touch.
  Tensor& grad_buf(int32_t id);
  void check_same_graph(Var v, const char* op_name) const;

  std::deque<Node> nodes_;  // deque: references from value()/grad() stay valid as nodes are appended
  std::unordered_map<const Parameter*, int32_t> param_nodes_;
};

// Global L2 norm of all parameter gradients.
double global_grad_norm(const std::vector<Parameter*>& params);

}  // namespace noisesep
