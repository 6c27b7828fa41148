// Copyright 2026 The noisesep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "noisesep/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <utility>

namespace noisesep {
namespace {

// C[m, n] += A[m, k] * B[k, n]
void gemm_nn_acc(int64_t m, int64_t n, int64_t k, const double* __restrict a,
                 const double* __restrict b, double* __restrict c) {
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m, n] += sum_k A[m, k] * B[n, k]
void gemm_nt_acc(int64_t m, int64_t n, int64_t k, const double* __restrict a,
                 const double* __restrict b, double* __restrict c) {
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
      int64_t p = 0;
      for (; p + 4 <= k; p += 4) {
        s0 += arow[p] * brow[p];
        s1 += arow[p + 1] * brow[p + 1];
        s2 += arow[p + 2] * brow[p + 2];
        s3 += arow[p + 3] * brow[p + 3];
      }
      double s = (s0 + s1) + (s2 + s3);
      for (; p < k; ++p) s += arow[p] * brow[p];
      crow[j] += s;
    }
  }
}

// C[m, n] += sum_k A[k, m] * B[k, n]
void gemm_tn_acc(int64_t m, int64_t n, int64_t k, const double* __restrict a,
                 const double* __restrict b, double* __restrict c) {
  for (int64_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (int64_t i = 0; i < m; ++i) {
      const double av = arow[i];
      double* crow = c + i * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// (outer, inner) extents around `axis` for a row-major shape.
std::pair<int64_t, int64_t> split_at_axis(const std::vector<int64_t>& shape, int axis) {
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= shape[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) inner *= shape[i];
  return {outer, inner};
}

int check_axis(const std::vector<int64_t>& shape, int axis, const char* op) {
  const int nd = static_cast<int>(shape.size());
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd) {
    throw ShapeError(std::string(op) + ": axis out of range for shape " +
                     Tensor::shape_str(shape));
  }
  return axis;
}

}  // namespace

const Graph::Node& Graph::node(Var v) const {
  check_same_graph(v, "Graph");
  return nodes_[static_cast<size_t>(v.id)];
}

Graph::Node& Graph::node(Var v) {
  check_same_graph(v, "Graph");
  return nodes_[static_cast<size_t>(v.id)];
}

void Graph::check_same_graph(Var v, const char* op_name) const {
  if (v.graph != this || v.id < 0 || static_cast<size_t>(v.id) >= nodes_.size()) {
    throw ContractError(std::string(op_name) + ": Var does not belong to this graph");
  }
}

Var Graph::push(Tensor value, bool requires_grad, std::vector<int32_t> inputs,
                std::function<void(Graph&, int32_t)> backward_fn, const char* op_name) {
  if (!value.all_finite()) {
    throw NumericError(std::string(op_name) + ": produced non-finite values");
  }
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.inputs = std::move(inputs);
  if (requires_grad) n.backward_fn = std::move(backward_fn);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int32_t>(nodes_.size() - 1)};
}

Tensor& Graph::grad_buf(int32_t id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
  return n.grad;
}

const Tensor& Graph::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.empty()) {
    throw ContractError("Graph::grad: no gradient recorded for this node");
  }
  return n.grad;
}

Var Graph::constant(Tensor value) {
  return push(std::move(value), false, {}, nullptr, "constant");
}

Var Graph::param(Parameter& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Var{this, it->second};
  Var v = push(p.value, true, {}, nullptr, "param");
  nodes_[static_cast<size_t>(v.id)].bound_param = &p;
  param_nodes_[&p] = v.id;
  return v;
}

Var Graph::detach(Var x) {
  check_same_graph(x, "detach");
  return push(node(x).value, false, {}, nullptr, "detach");
}

void Graph::backward(Var loss) {
  check_same_graph(loss, "backward");
  if (node(loss).value.size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        node(loss).value.shape_str());
  }
  for (auto& n : nodes_) n.grad = Tensor();
  grad_buf(loss.id)[0] = 1.0;
  for (int32_t id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.empty() || !n.requires_grad) continue;
    if (n.backward_fn) n.backward_fn(*this, id);
  }
  for (auto& [p, id] : param_nodes_) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.empty()) continue;
    Parameter* param = n.bound_param;
    for (int64_t i = 0; i < n.grad.size(); ++i) param->grad[i] += n.grad[i];
  }
}

// --- Convolutions ------------------------------------------------------------

Var Graph::conv1d(Var x, Var w, Var b, int stride) {
  check_same_graph(x, "conv1d");
  check_same_graph(w, "conv1d");
  const Tensor& xv = node(x).value;
  const Tensor& wv = node(w).value;
  if (stride < 1) throw ShapeError("conv1d: stride must be >= 1");
  if (xv.ndim() != 2 || wv.ndim() != 3) {
    throw ShapeError("conv1d: expected x [Cin, T] and w [Cout, Cin, k], got " +
                     xv.shape_str() + " and " + wv.shape_str());
  }
  const int64_t cin = xv.dim(0), t_len = xv.dim(1);
  const int64_t cout = wv.dim(0), kernel = wv.dim(2);
  if (wv.dim(1) != cin) {
    throw ShapeError("conv1d: channel mismatch, x has " + std::to_string(cin) +
                     " channels but w expects " + std::to_string(wv.dim(1)));
  }
  if (t_len < kernel) {
    throw ShapeError("conv1d: input length " + std::to_string(t_len) +
                     " shorter than kernel " + std::to_string(kernel));
  }
  const bool has_bias = b.valid();
  if (has_bias) {
    check_same_graph(b, "conv1d");
    if (node(b).value.ndim() != 1 || node(b).value.dim(0) != cout) {
      throw ShapeError("conv1d: bias shape " + node(b).value.shape_str() +
                       " does not match " + std::to_string(cout) + " output channels");
    }
  }
  const int64_t frames = (t_len - kernel) / stride + 1;
  Tensor out({cout, frames});
  const double* bp = has_bias ? node(b).value.data() : nullptr;
  for (int64_t co = 0; co < cout; ++co) {
    double* orow = out.data() + co * frames;
    if (bp) {
      for (int64_t l = 0; l < frames; ++l) orow[l] = bp[co];
    }
    for (int64_t ci = 0; ci < cin; ++ci) {
      const double* xrow = xv.data() + ci * t_len;
      const double* wrow = wv.data() + (co * cin + ci) * kernel;
      for (int64_t l = 0; l < frames; ++l) {
        const double* xwin = xrow + l * stride;
        double s = 0.0;
        for (int64_t j = 0; j < kernel; ++j) s += wrow[j] * xwin[j];
        orow[l] += s;
      }
    }
  }
  std::vector<int32_t> inputs = {x.id, w.id};
  if (has_bias) inputs.push_back(b.id);
  bool rg = node(x).requires_grad || node(w).requires_grad ||
            (has_bias && node(b).requires_grad);
  auto bw = [stride, cin, cout, kernel, frames, t_len, has_bias](Graph& g, int32_t self) {
    Node& sn = g.node_at(self);
    const Tensor& gout = sn.grad;
    const int32_t xid = sn.inputs[0], wid = sn.inputs[1];
    const Tensor& xv2 = g.node_at(xid).value;
    const Tensor& wv2 = g.node_at(wid).value;
    if (g.node_at(xid).requires_grad) {
      Tensor& gx = g.grad_buf(xid);
      for (int64_t co = 0; co < cout; ++co) {
        const double* grow = gout.data() + co * frames;
        for (int64_t ci = 0; ci < cin; ++ci) {
          double* gxrow = gx.data() + ci * t_len;
          const double* wrow = wv2.data() + (co * cin + ci) * kernel;
          for (int64_t l = 0; l < frames; ++l) {
            const double gv = grow[l];
            double* gxwin = gxrow + l * stride;
            for (int64_t j = 0; j < kernel; ++j) gxwin[j] += gv * wrow[j];
          }
        }
      }
    }
    if (g.node_at(wid).requires_grad) {
      Tensor& gw = g.grad_buf(wid);
      for (int64_t co = 0; co < cout; ++co) {
        const double* grow = gout.data() + co * frames;
        for (int64_t ci = 0; ci < cin; ++ci) {
          const double* xrow = xv2.data() + ci * t_len;
          double* gwrow = gw.data() + (co * cin + ci) * kernel;
          for (int64_t j = 0; j < kernel; ++j) {
            double s = 0.0;
            for (int64_t l = 0; l < frames; ++l) s += grow[l] * xrow[l * stride + j];
            gwrow[j] += s;
          }
        }
      }
    }
    if (has_bias && g.node_at(sn.inputs[2]).requires_grad) {
      Tensor& gb = g.grad_buf(sn.inputs[2]);
      for (int64_t co = 0; co < cout; ++co) {
        const double* grow = gout.data() + co * frames;
        double s = 0.0;
        for (int64_t l = 0; l < frames; ++l) s += grow[l];
        gb[co] += s;
      }
    }
  };
  return push(std::move(out), rg, std::move(inputs), bw, "conv1d");
}

Var Graph::conv1d_transpose(Var x, Var w, Var b, int stride) {
  check_same_graph(x, "conv1d_transpose");
  check_same_graph(w, "conv1d_transpose");
  const Tensor& xv = node(x).value;
  const Tensor& wv = node(w).value;
  if (stride < 1) throw ShapeError("conv1d_transpose: stride must be >= 1");
  if (xv.ndim() != 2 || wv.ndim() != 3) {
    throw ShapeError("conv1d_transpose: expected x [Cin, L] and w [Cin, Cout, k], got " +
                     xv.shape_str() + " and " + wv.shape_str());
  }
  const int64_t cin = xv.dim(0), frames = xv.dim(1);
  const int64_t cout = wv.dim(1), kernel = wv.dim(2);
  if (wv.dim(0) != cin) {
    throw ShapeError("conv1d_transpose: channel mismatch, x has " + std::to_string(cin) +
                     " channels but w expects " + std::to_string(wv.dim(0)));
  }
  const bool has_bias = b.valid();
  if (has_bias) {
    check_same_graph(b, "conv1d_transpose");
    if (node(b).value.ndim() != 1 || node(b).value.dim(0) != cout) {
      throw ShapeError("conv1d_transpose: bias shape " + node(b).value.shape_str() +
                       " does not match " + std::to_string(cout) + " output channels");
    }
  }
  const int64_t t_len = (frames - 1) * stride + kernel;
  Tensor out({cout, t_len});
  if (has_bias) {
    const double* bp = node(b).value.data();
    for (int64_t co = 0; co < cout; ++co) {
      double* orow = out.data() + co * t_len;
      for (int64_t t = 0; t < t_len; ++t) orow[t] = bp[co];
    }
  }
  for (int64_t ci = 0; ci < cin; ++ci) {
    const double* xrow = xv.data() + ci * frames;
    for (int64_t co = 0; co < cout; ++co) {
      double* orow = out.data() + co * t_len;
      const double* wrow = wv.data() + (ci * cout + co) * kernel;
      for (int64_t l = 0; l < frames; ++l) {
        const double xval = xrow[l];
        double* owin = orow + l * stride;
        for (int64_t j = 0; j < kernel; ++j) owin[j] += xval * wrow[j];
      }
    }
  }
  std::vector<int32_t> inputs = {x.id, w.id};
  if (has_bias) inputs.push_back(b.id);
  bool rg = node(x).requires_grad || node(w).requires_grad ||
            (has_bias && node(b).requires_grad);
  auto bw = [stride, cin, cout, kernel, frames, t_len, has_bias](Graph& g, int32_t self) {
    Node& sn = g.node_at(self);
    const Tensor& gout = sn.grad;
    const int32_t xid = sn.inputs[0], wid = sn.inputs[1];
    const Tensor& xv2 = g.node_at(xid).value;
    const Tensor& wv2 = g.node_at(wid).value;
    if (g.node_at(xid).requires_grad) {
      Tensor& gx = g.grad_buf(xid);
      for (int64_t ci = 0; ci < cin; ++ci) {
        double* gxrow = gx.data() + ci * frames;
        for (int64_t co = 0; co < cout; ++co) {
          const double* grow = gout.data() + co * t_len;
          const double* wrow = wv2.data() + (ci * cout + co) * kernel;
          for (int64_t l = 0; l < frames; ++l) {
            const double* gwin = grow + l * stride;
            double s = 0.0;
            for (int64_t j = 0; j < kernel; ++j) s += gwin[j] * wrow[j];
            gxrow[l] += s;
          }
        }
      }
    }
    if (g.node_at(wid).requires_grad) {
      Tensor& gw = g.grad_buf(wid);
      for (int64_t ci = 0; ci < cin; ++ci) {
        const double* xrow = xv2.data() + ci * frames;
        for (int64_t co = 0; co < cout; ++co) {
          const double* grow = gout.data() + co * t_len;
          double* gwrow = gw.data() + (ci * cout + co) * kernel;
          for (int64_t j = 0; j < kernel; ++j) {
            double s = 0.0;
            for (int64_t l = 0; l < frames; ++l) s += xrow[l] * grow[l * stride + j];
            gwrow[j] += s;
          }
        }
      }
    }
    if (has_bias && g.node_at(sn.inputs[2]).requires_grad) {
      Tensor& gb = g.grad_buf(sn.inputs[2]);
      for (int64_t co = 0; co < cout; ++co) {
        const double* grow = gout.data() + co * t_len;
        double s = 0.0;
        for (int64_t t = 0; t < t_len; ++t) s += grow[t];
        gb[co] += s;
      }
    }
  };
  return push(std::move(out), rg, std::move(inputs), bw, "conv1d_transpose");
}

// --- Linear algebra ----------------------------------------------------------

Var Graph::affine(Var x, Var w, Var b) {
  check_same_graph(x, "affine");
  check_same_graph(w, "affine");
  const Tensor& xv = node(x).value;
  const Tensor& wv = node(w).value;
  if (wv.ndim() != 2) {
    throw ShapeError("affine: weight must be 2-D [in, out], got " + wv.shape_str());
  }
  const int64_t in_dim = wv.dim(0), out_dim = wv.dim(1);
  if (xv.ndim() < 1 || xv.dim(xv.ndim() - 1) != in_dim) {
    throw ShapeError("affine: last axis of x " + xv.shape_str() + " must equal weight rows " +
                     std::to_string(in_dim));
  }
  const bool has_bias = b.valid();
  if (has_bias) {
    check_same_graph(b, "affine");
    if (node(b).value.ndim() != 1 || node(b).value.dim(0) != out_dim) {
      throw ShapeError("affine: bias shape " + node(b).value.shape_str() + " must be [" +
                       std::to_string(out_dim) + "]");
    }
  }
  const int64_t rows = xv.size() / in_dim;
  std::vector<int64_t> out_shape = xv.shape();
  out_shape.back() = out_dim;
  Tensor out(out_shape);
  if (has_bias) {
    const double* bp = node(b).value.data();
    for (int64_t r = 0; r < rows; ++r) {
      std::memcpy(out.data() + r * out_dim, bp, sizeof(double) * static_cast<size_t>(out_dim));
    }
  }
  gemm_nn_acc(rows, out_dim, in_dim, xv.data(), wv.data(), out.data());
  std::vector<int32_t> inputs = {x.id, w.id};
  if (has_bias) inputs.push_back(b.id);
  bool rg = node(x).requires_grad || node(w).requires_grad ||
            (has_bias && node(b).requires_grad);
  auto bw = [rows, in_dim, out_dim, has_bias](Graph& g, int32_t self) {
    Node& sn = g.node_at(self);
    const Tensor& gout = sn.grad;
    const int32_t xid = sn.inputs[0], wid = sn.inputs[1];
    if (g.node_at(xid).requires_grad) {
      gemm_nt_acc(rows, in_dim, out_dim, gout.data(), g.node_at(wid).value.data(),
                  g.grad_buf(xid).data());
    }
    if (g.node_at(wid).requires_grad) {
      gemm_tn_acc(in_dim, out_dim, rows, g.node_at(xid).value.data(), gout.data(),
                  g.grad_buf(wid).data());
    }
    if (has_bias && g.node_at(sn.inputs[2]).requires_grad) {
      Tensor& gb = g.grad_buf(sn.inputs[2]);
      for (int64_t r = 0; r < rows; ++r) {
        const double* grow = gout.data() + r * out_dim;
        for (int64_t j = 0; j < out_dim; ++j) gb[j] += grow[j];
      }
    }
  };
  return push(std::move(out), rg, std::move(inputs), bw, "affine");
}

Var Graph::matmul(Var a, Var b) {
  check_same_graph(a, "matmul");
  check_same_graph(b, "matmul");
  const Tensor& av = node(a).value;
  const Tensor& bv = node(b).value;
  if (av.ndim() != bv.ndim() || (av.ndim() != 2 && av.ndim() != 3)) {
    throw ShapeError("matmul: expected matching 2-D or 3-D operands, got " + av.shape_str() +
                     " and " + bv.shape_str());
  }
  const bool batched = av.ndim() == 3;
  const int64_t batch = batched ? av.dim(0) : 1;
  if (batched && bv.dim(0) != batch) {
    throw ShapeError("matmul: batch mismatch " + av.shape_str() + " vs " + bv.shape_str());
  }
  const int64_t m = av.dim(batched ? 1 : 0), k = av.dim(batched ? 2 : 1);
  const int64_t k2 = bv.dim(batched ? 1 : 0), n = bv.dim(batched ? 2 : 1);
  if (k != k2) {
    throw ShapeError("matmul: inner dimensions differ, " + av.shape_str() + " x " +
                     bv.shape_str());
  }
  Tensor out(batched ? std::vector<int64_t>{batch, m, n} : std::vector<int64_t>{m, n});
  for (int64_t bb = 0; bb < batch; ++bb) {
    gemm_nn_acc(m, n, k, av.data() + bb * m * k, bv.data() + bb * k * n,
                out.data() + bb * m * n);
  }
  bool rg = node(a).requires_grad || node(b).requires_grad;
  auto bw = [batch, m, n, k](Graph& g, int32_t self) {
    Node& sn = g.node_at(self);
    const Tensor& gout = sn.grad;
    const int32_t aid = sn.inputs[0], bid = sn.inputs[1];
    const Tensor& av2 = g.node_at(aid).value;
    const Tensor& bv2 = g.node_at(bid).value;
    if (g.node_at(aid).requires_grad) {
      Tensor& ga = g.grad_buf(aid);
      for (int64_t bb = 0; bb < batch; ++bb) {
        gemm_nt_acc(m, k, n, gout.data() + bb * m * n, bv2.data() + bb * k * n,
                    ga.data() + bb * m * k);
      }
    }
    if (g.node_at(bid).requires_grad) {
      Tensor& gb = g.grad_buf(bid);
      for (int64_t bb = 0; bb < batch; ++bb) {
        gemm_tn_acc(k, n, m, av2.data() + bb * m * k, gout.data() + bb * m * n,
                    gb.data() + bb * k * n);
      }
    }
  };
  return push(std::move(out), rg, {a.id, b.id}, bw, "matmul");
}

// --- Activations -------------------------------------------------------------

Var Graph::relu(Var x) {
  check_same_graph(x, "relu");
  const Tensor& xv = node(x).value;
  Tensor out(xv.shape());
  for (int64_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  auto bw = [](Graph& g, int32_t self) {
    Node& sn = g.node_at(self);
    const int32_t xid = sn.inputs[0];
    if (!g.node_at(xid).requires_grad) return;
    const Tensor& xv2 = g.node_at(xid).value;
    Tensor& gx = g.grad_buf(xid);
    for (int64_t i = 0; i < xv2.size(); ++i) {
      if (xv2[i] > 0.0) gx[i] += sn.grad[i];
    }
  };
  return push(std::move(out), node(x).requires_grad, {x.id}, bw, "relu");
}

Var Graph::prelu(Var x, Var a) {
  check_same_graph(x, "prelu");
  check_same_graph(a, "prelu");
  const Tensor& xv = node(x).value;
  const Tensor& av = node(a).value;
  if (av.size() != 1) {
    throw ShapeError("prelu: slope must be a single-element tensor, got " + av.shape_str());
  }
  const double slope = av[0];
  Tensor out(xv.shape());
  for (int64_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : slope * xv[i];
  bool rg = node(x).requires_grad || node(a).requires_grad;
  auto bw = [slope](Graph& g, int32_t self) {
    Node& sn = g.node_at(self);
    const int32_t xid = sn.inputs[0], aid = sn.inputs[1];
    const Tensor& xv2 = g.node_at(xid).value;
    // Subgradient at exactly 0 is 0 for both x and the slope.
    if (g.node_at(xid).requires_grad) {
      Tensor& gx = g.grad_buf(xid);
      for (int64_t i = 0; i < xv2.size(); ++i) {
        if (xv2[i] > 0.0) {
          gx[i] += sn.grad[i];
        } else if (xv2[i] < 0.0) {
          gx[i] += sn.grad[i] * slope;
        }
      }
    }
    if (g.node_at(aid).requires_grad) {
      double s = 0.0;
      for (int64_t i = 0; i < xv2.size(); ++i) {
        if (xv2[i] < 0.0) s += sn.grad[i] * xv2[i];
      }
      g.grad_buf(aid)[0] += s;
    }
  };
  return push(std::move(out), rg, {x.id, a.id}, bw, "prelu");
}

Var Graph::sigmoid(Var x) {
  check_same_graph(x, "sigmoid");
  const Tensor& xv = node(x).value;
  Tensor out(xv.shape());
  for (int64_t i = 0; i < xv.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-xv[i]));
  auto bw = [](Graph& g, int32_t self) {
    Node& sn = g.node_at(self);
    const int32_t xid = sn.inputs[0];
    if (!g.node_at(xid).requires_grad) return;
    Tensor& gx = g.grad_buf(xid);
    for (int64_t i = 0; i < sn.value.size(); ++i) {
      const double y = sn.value[i];
      gx[i] += sn.grad[i] * y * (1.0 - y);
    }
  };
  return push(std::move(out), node(x).requires_grad, {x.id}, bw, "sigmoid");
}

Var Graph::tanh(Var x) {
  check_same_graph(x, "tanh");
  const Tensor& xv = node(x).value;
  Tensor out(xv.shape());
  for (int64_t i = 0; i < xv.size(); ++i) out[i] = std::tanh(xv[i]);
  auto bw = [](Graph& g, int32_t self) {
    Node& sn = g.node_at(self);
    const int32_t xid = sn.inputs[0];
    if (!g.node_at(xid).requires_grad) return;
    Tensor& gx = g.grad_buf(xid);
    for (int64_t i = 0; i < sn.value.size(); ++i) {
      const double y = sn.value[i];
      gx[i] += sn.grad[i] * (1.0 - y * y);
    }
  };
  return push(std::move(out), node(x).requires_grad, {x.id}, bw, "tanh");
}

// --- Normalizations ----------------------------------------------------------

Var Graph::layer_norm(Var x, Var gain, Var bias, double eps) {
  check_same_graph(x, "layer_norm");
  check_same_graph(gain, "layer_norm");
  check_same_graph(bias, "layer_norm");
  if (eps <= 0.0) throw ParamError("layer_norm: eps must be positive");
  const Tensor& xv = node(x).value;
  const int64_t n = xv.dim(xv.ndim() - 1);
  const Tensor& gv = node(gain).value;
  const Tensor& bv = node(bias).value;
  if (gv.size() != n || bv.size() != n) {
    throw ShapeError("layer_norm: gain/bias must have " + std::to_string(n) +
                     " elements, got " + gv.shape_str() + " and " + bv.shape_str());
  }
  const int64_t rows = xv.size() / n;
  Tensor out(xv.shape());
  Tensor mean({rows});
  Tensor inv_std({rows});
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * n;
    double mu = 0.0;
    for (int64_t j = 0; j < n; ++j) mu += xr[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      const double d = xr[j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    mean[r] = mu;
    inv_std[r] = inv;
    double* orow = out.data() + r * n;
    for (int64_t j = 0; j < n; ++j) orow[j] = (xr[j] - mu) * inv * gv[j] + bv[j];
  }
  bool rg = node(x).requires_grad || node(gain).requires_grad || node(bias).requires_grad;
  auto bw = [rows, n, mean, inv_std](Graph& g, int32_t self) {
    Node& sn = g.node_at(self);
    const int32_t xid = sn.inputs[0], gid = sn.inputs[1], bid = sn.inputs[2];
    const Tensor& xv2 = g.node_at(xid).value;
    const Tensor& gv2 = g.node_at(gid).value;
    const bool need_x = g.node_at(xid).requires_grad;
    const bool need_g = g.node_at(gid).requires_grad;
    const bool need_b = g.node_at(bid).requires_grad;
    Tensor* gx = need_x ? &g.grad_buf(xid) : nullptr;
    Tensor* gg = need_g ? &g.grad_buf(gid) : nullptr;
    Tensor* gb = need_b ? &g.grad_buf(bid) : nullptr;
    for (int64_t r = 0; r < rows; ++r) {
      const double* xr = xv2.data() + r * n;
      const double* grow = sn.grad.data() + r * n;
      const double mu = mean[r], inv = inv_std[r];
      if (need_g || need_b) {
        for (int64_t j = 0; j < n; ++j) {
          const double xhat = (xr[j] - mu) * inv;
          if (gg) (*gg)[j] += grow[j] * xhat;
          if (gb) (*gb)[j] += grow[j];
        }
      }
      if (need_x) {
        double sum1 = 0.0, sum2 = 0.0;
        for (int64_t j = 0; j < n; ++j) {
          const double dxhat = grow[j] * gv2[j];
          sum1 += dxhat;
          sum2 += dxhat * (xr[j] - mu) * inv;
        }
        const double inv_n = 1.0 / static_cast<double>(n);
        double* gxr = gx->data() + r * n;
        for (int64_t j = 0; j < n; ++j) {
          const double xhat = (xr[j] - mu) * inv;
          const double dxhat = grow[j] * gv2[j];
          gxr[j] += inv * (dxhat - sum1 * inv_n - xhat * sum2 * inv_n);
        }
      }
    }
  };
  return push(std::move(out), rg, {x.id, gain.id, bias.id}, bw, "layer_norm");
}

Var Graph::l2_normalize(Var x, int axis, double eps) {
  check_same_graph(x, "l2_normalize");
  if (eps <= 0.0) throw ParamError("l2_normalize: eps must be positive");
  const Tensor& xv = node(x).value;
  axis = check_axis(xv.shape(), axis, "l2_normalize");
  const auto [outer, inner] = split_at_axis(xv.shape(), axis);
  const int64_t n = xv.dim(axis);
  Tensor out(xv.shape());
  Tensor denom({outer, inner > 0 ? inner : 1});
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * n * inner + in;
      double ss = 0.0;
      for (int64_t j = 0; j < n; ++j) {
        const double v = xv[base + j * inner];
        ss += v * v;
      }
      const double nrm = std::sqrt(ss);
      const double d = nrm > eps ? nrm : eps;
      denom[o * inner + in] = d;
      for (int64_t j = 0; j < n; ++j) out[base + j * inner] = xv[base + j * inner] / d;
    }
  }
  auto bw = [outer, inner, n, denom](Graph& g, int32_t self) {
    Node& sn = g.node_at(self);
    const int32_t xid = sn.inputs[0];
    if (!g.node_at(xid).requires_grad) return;
    Tensor& gx = g.grad_buf(xid);
    for (int64_t o = 0; o < outer; ++o) {
      for (int64_t in = 0; in < inner; ++in) {
        const int64_t base = o * n * inner + in;
        const double d = denom[o * inner + in];
        double dot = 0.0;
        for (int64_t j = 0; j < n; ++j) {
          dot += sn.grad[base + j * inner] * sn.value[base + j * inner];
        }
        for (int64_t j = 0; j < n; ++j) {
          const int64_t idx = base + j * inner;
          gx[idx] += (sn.grad[idx] - sn.value[idx] * dot) / d;
        }
      }
    }
  };
  return push(std::move(out), node(x).requires_grad, {x.id}, bw, "l2_normalize");
}

// --- Elementwise -------------------------------------------------------------

Var Graph::add(Var a, Var b) {
  check_same_graph(a, "add");
  check_same_graph(b, "add");
  const Tensor& av = node(a).value;
  const Tensor& bv = node(b).value;
  if (!av.same_shape(bv)) {
    throw ShapeError("add: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
  }
  Tensor out(av.shape());
  for (int64_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  bool rg = node(a).requires_grad || node(b).requires_grad;
  auto bw = [](Graph& g, int32_t self) {
    Node& sn = g.node_at(self);
    for (int input = 0; input < 2; ++input) {
      const int32_t id = sn.inputs[static_cast<size_t>(input)];
      if (!g.node_at(id).requires_grad) continue;
      Tensor& gi = g.grad_buf(id);
      for (int64_t i = 0; i < sn.grad.size(); ++i) gi[i] += sn.grad[i];
    }
  };
  return push(std::move(out), rg, {a.id, b.id}, bw, "add");
}

Var Graph::sub(Var a, Var b) {
  check_same_graph(a, "sub");
  check_same_graph(b, "sub");
  const Tensor& av = node(a).value;
  const Tensor& bv = node(b).value;
  if (!av.same_shape(bv)) {
    throw ShapeError("sub: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
  }
  Tensor out(av.shape());
  for (int64_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  bool rg = node(a).requires_grad || node(b).requires_grad;
  auto bw = [](Graph& g, int32_t self) {
    Node& sn = g.node_at(self);
    const int32_t aid = sn.inputs[0], bid = sn.inputs[1];
    if (g.node_at(aid).requires_grad) {
      Tensor& ga = g.grad_buf(aid);
      for (int64_t i = 0; i < sn.grad.size(); ++i) ga[i] += sn.grad[i];
    }
    if (g.node_at(bid).requires_grad) {
      Tensor& gb = g.grad_buf(bid);
      for (int64_t i = 0; i < sn.grad.size(); ++i) gb[i] -= sn.grad[i];
    }
  };
  return push(std::move(out), rg, {a.id, b.id}, bw, "sub");
}

Var Graph::mul(Var a, Var b) {
  check_same_graph(a, "mul");
  check_same_graph(b, "mul");
  const Tensor& av = node(a).value;
  const Tensor& bv = node(b).value;
  if (!av.same_shape(bv)) {
    throw ShapeError("mul: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
  }
  Tensor out(av.shape());
  for (int64_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  bool rg = node(a).requires_grad || node(b).requires_grad;
  auto bw = [](Graph& g, int32_t self) {
    Node& sn = g.node_at(self);
    const int32_t aid = sn.inputs[0], bid = sn.inputs[1];
    const Tensor& av2 = g.node_at(aid).value;
    const Tensor& bv2 = g.node_at(bid).value;
    if (g.node_at(aid).requires_grad) {
      Tensor& ga = g.grad_buf(aid);
      for (int64_t i = 0; i < sn.grad.size(); ++i) ga[i] += sn.grad[i] * bv2[i];
    }
    if (g.node_at(bid).requires_grad) {
      Tensor& gb = g.grad_buf(bid);
      for (int64_t i = 0; i < sn.grad.size(); ++i) gb[i] += sn.grad[i] * av2[i];
    }
  };
  return push(std::move(out), rg, {a.id, b.id}, bw, "mul");
}

Var Graph::scale(Var x, double c) {
  check_same_graph(x, "scale");
  const Tensor& xv = node(x).value;
  Tensor out(xv.shape());
  for (int64_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * c;
  auto bw = [c](Graph& g, int32_t self) {
    Node& sn = g.node_at(self);
    const int32_t xid = sn.inputs[0];
    if (!g.node_at(xid).requires_grad) return;
    Tensor& gx = g.grad_buf(xid);
    for (int64_t i = 0; i < sn.grad.size(); ++i) gx[i] += sn.grad[i] * c;
  };
  return push(std::move(out), node(x).requires_grad, {x.id}, bw, "scale");
}

Var Graph::add_scalar(Var x, double c) {
  check_same_graph(x, "add_scalar");
  const Tensor& xv = node(x).value;
  Tensor out(xv.shape());
  for (int64_t i = 0; i < xv.size(); ++i) out[i] = xv[i] + c;
  auto bw = [](Graph& g, int32_t self) {
    Node& sn = g.node_at(self);
    const int32_t xid = sn.inputs[0];
    if (!g.node_at(xid).requires_grad) return;
    Tensor& gx = g.grad_buf(xid);
    for (int64_t i = 0; i < sn.grad.size(); ++i) gx[i] += sn.grad[i];
  };
  return push(std::move(out), node(x).requires_grad, {x.id}, bw, "add_scalar");
}

Var Graph::scale_by(Var x, Var s) {
  check_same_graph(x, "scale_by");
  check_same_graph(s, "scale_by");
  const Tensor& xv = node(x).value;
  const Tensor& sv = node(s).value;
  if (sv.size() != 1) {
    throw ShapeError("scale_by: scalar operand must have one element, got " + sv.shape_str());
  }
  const double c = sv[0];
  Tensor out(xv.shape());
  for (int64_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * c;
  bool rg = node(x).requires_grad || node(s).requires_grad;
  auto bw = [c](Graph& g, int32_t self) {
    Node& sn = g.node_at(self);
    const int32_t xid = sn.inputs[0], sid = sn.inputs[1];
    const Tensor& xv2 = g.node_at(xid).value;
    if (g.node_at(xid).requires_grad) {
      Tensor& gx = g.grad_buf(xid);
      for (int64_t i = 0; i < sn.grad.size(); ++i) gx[i] += sn.grad[i] * c;
    }
    if (g.node_at(sid).requires_grad) {
      double acc = 0.0;
      for (int64_t i = 0; i < sn.grad.size(); ++i) acc += sn.grad[i] * xv2[i];
      g.grad_buf(sid)[0] += acc;
    }
  };
  return push(std::move(out), rg, {x.id, s.id}, bw, "scale_by");
}

// --- Reductions --------------------------------------------------------------

Var Graph::reduce_sum(Var x) {
  check_same_graph(x, "reduce_sum");
  const Tensor& xv = node(x).value;
  double s = 0.0;
  for (int64_t i = 0; i < xv.size(); ++i) s += xv[i];
  auto bw = [](Graph& g, int32_t self) {
    Node& sn = g.node_at(self);
    const int32_t xid = sn.inputs[0];
    if (!g.node_at(xid).requires_grad) return;
    Tensor& gx = g.grad_buf(xid);
    const double gv = sn.grad[0];
    for (int64_t i = 0; i < gx.size(); ++i) gx[i] += gv;
  };
  return push(Tensor::scalar(s), node(x).requires_grad, {x.id}, bw, "reduce_sum");
}

Var Graph::reduce_mean(Var x) {
  check_same_graph(x, "reduce_mean");
  const Tensor& xv = node(x).value;
  const int64_t count = xv.size();
  double s = 0.0;
  for (int64_t i = 0; i < count; ++i) s += xv[i];
  s /= static_cast<double>(count);
  auto bw = [count](Graph& g, int32_t self) {
    Node& sn = g.node_at(self);
    const int32_t xid = sn.inputs[0];
    if (!g.node_at(xid).requires_grad) return;
    Tensor& gx = g.grad_buf(xid);
    const double gv = sn.grad[0] / static_cast<double>(count);
    for (int64_t i = 0; i < gx.size(); ++i) gx[i] += gv;
  };
  return push(Tensor::scalar(s), node(x).requires_grad, {x.id}, bw, "reduce_mean");
}

Var Graph::sum_last(Var x) {
  check_same_graph(x, "sum_last");
  const Tensor& xv = node(x).value;
  const int64_t n = xv.dim(xv.ndim() - 1);
  const int64_t rows = xv.size() / n;
  std::vector<int64_t> out_shape(xv.shape().begin(), xv.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  Tensor out(out_shape);
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * n;
    double s = 0.0;
    for (int64_t j = 0; j < n; ++j) s += xr[j];
    out[r] = s;
  }
  auto bw = [rows, n](Graph& g, int32_t self) {
    Node& sn = g.node_at(self);
    const int32_t xid = sn.inputs[0];
    if (!g.node_at(xid).requires_grad) return;
    Tensor& gx = g.grad_buf(xid);
    for (int64_t r = 0; r < rows; ++r) {
      const double gv = sn.grad[r];
      double* gxr = gx.data() + r * n;
      for (int64_t j = 0; j < n; ++j) gxr[j] += gv;
    }
  };
  return push(std::move(out), node(x).requires_grad, {x.id}, bw, "sum_last");
}

// --- Transcendentals ---------------------------------------------------------

Var Graph::exp(Var x) {
  check_same_graph(x, "exp");
  const Tensor& xv = node(x).value;
  Tensor out(xv.shape());
  for (int64_t i = 0; i < xv.size(); ++i) out[i] = std::exp(xv[i]);
  auto bw = [](Graph& g, int32_t self) {
    Node& sn = g.node_at(self);
    const int32_t xid = sn.inputs[0];
    if (!g.node_at(xid).requires_grad) return;
    Tensor& gx = g.grad_buf(xid);
    for (int64_t i = 0; i < sn.grad.size(); ++i) gx[i] += sn.grad[i] * sn.value[i];
  };
  return push(std::move(out), node(x).requires_grad, {x.id}, bw, "exp");
}

Var Graph::log(Var x) {
  check_same_graph(x, "log");
  const Tensor& xv = node(x).value;
  Tensor out(xv.shape());
  for (int64_t i = 0; i < xv.size(); ++i) out[i] = std::log(xv[i]);
  auto bw = [](Graph& g, int32_t self) {
    Node& sn = g.node_at(self);
    const int32_t xid = sn.inputs[0];
    if (!g.node_at(xid).requires_grad) return;
    const Tensor& xv2 = g.node_at(xid).value;
    Tensor& gx = g.grad_buf(xid);
    for (int64_t i = 0; i < sn.grad.size(); ++i) gx[i] += sn.grad[i] / xv2[i];
  };
  return push(std::move(out), node(x).requires_grad, {x.id}, bw, "log");
}

Var Graph::clamp_min(Var x, double c) {
  check_same_graph(x, "clamp_min");
  const Tensor& xv = node(x).value;
  Tensor out(xv.shape());
  for (int64_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > c ? xv[i] : c;
  auto bw = [c](Graph& g, int32_t self) {
    Node& sn = g.node_at(self);
    const int32_t xid = sn.inputs[0];
    if (!g.node_at(xid).requires_grad) return;
    const Tensor& xv2 = g.node_at(xid).value;
    Tensor& gx = g.grad_buf(xid);
    for (int64_t i = 0; i < sn.grad.size(); ++i) {
      if (xv2[i] > c) gx[i] += sn.grad[i];
    }
  };
  return push(std::move(out), node(x).requires_grad, {x.id}, bw, "clamp_min");
}

// --- Structural --------------------------------------------------------------

Var Graph::concat(const std::vector<Var>& xs, int axis) {
  if (xs.empty()) throw ShapeError("concat: needs at least one input");
  for (Var v : xs) check_same_graph(v, "concat");
  const Tensor& first = node(xs[0]).value;
  axis = check_axis(first.shape(), axis, "concat");
  std::vector<int64_t> out_shape = first.shape();
  int64_t axis_total = 0;
  for (Var v : xs) {
    const Tensor& tv = node(v).value;
    if (tv.ndim() != first.ndim()) {
      throw ShapeError("concat: rank mismatch " + tv.shape_str() + " vs " + first.shape_str());
    }
    for (int d = 0; d < first.ndim(); ++d) {
      if (d != axis && tv.dim(d) != first.dim(d)) {
        throw ShapeError("concat: shape mismatch at axis " + std::to_string(d) + ": " +
                         tv.shape_str() + " vs " + first.shape_str());
      }
    }
    axis_total += tv.dim(axis);
  }
  out_shape[static_cast<size_t>(axis)] = axis_total;
  Tensor out(out_shape);
  const auto [outer, inner] = split_at_axis(out_shape, axis);
  int64_t offset = 0;
  std::vector<int64_t> extents;
  std::vector<int32_t> inputs;
  bool rg = false;
  for (Var v : xs) {
    const Tensor& tv = node(v).value;
    const int64_t ext = tv.dim(axis);
    for (int64_t o = 0; o < outer; ++o) {
      std::memcpy(out.data() + (o * axis_total + offset) * inner,
                  tv.data() + o * ext * inner,
                  sizeof(double) * static_cast<size_t>(ext * inner));
    }
    offset += ext;
    extents.push_back(ext);
    inputs.push_back(v.id);
    rg = rg || node(v).requires_grad;
  }
  auto bw = [outer, inner, axis_total, extents](Graph& g, int32_t self) {
    Node& sn = g.node_at(self);
    int64_t off = 0;
    for (size_t i = 0; i < sn.inputs.size(); ++i) {
      const int64_t ext = extents[i];
      const int32_t id = sn.inputs[i];
      if (g.node_at(id).requires_grad) {
        Tensor& gi = g.grad_buf(id);
        for (int64_t o = 0; o < outer; ++o) {
          const double* src = sn.grad.data() + (o * axis_total + off) * inner;
          double* dst = gi.data() + o * ext * inner;
          for (int64_t j = 0; j < ext * inner; ++j) dst[j] += src[j];
        }
      }
      off += ext;
    }
  };
  return push(std::move(out), rg, std::move(inputs), bw, "concat");
}

Var Graph::slice(Var x, int axis, int64_t start, int64_t stop) {
  check_same_graph(x, "slice");
  const Tensor& xv = node(x).value;
  axis = check_axis(xv.shape(), axis, "slice");
  const int64_t ext = xv.dim(axis);
  if (start < 0 || stop > ext || start >= stop) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(stop) +
                     ") invalid for axis extent " + std::to_string(ext));
  }
  std::vector<int64_t> out_shape = xv.shape();
  out_shape[static_cast<size_t>(axis)] = stop - start;
  const auto [outer, inner] = split_at_axis(xv.shape(), axis);
  const int64_t width = stop - start;
  Tensor out(out_shape);
  for (int64_t o = 0; o < outer; ++o) {
    std::memcpy(out.data() + o * width * inner, xv.data() + (o * ext + start) * inner,
                sizeof(double) * static_cast<size_t>(width * inner));
  }
  auto bw = [outer, inner, ext, start, width](Graph& g, int32_t self) {
    Node& sn = g.node_at(self);
    const int32_t xid = sn.inputs[0];
    if (!g.node_at(xid).requires_grad) return;
    Tensor& gx = g.grad_buf(xid);
    for (int64_t o = 0; o < outer; ++o) {
      const double* src = sn.grad.data() + o * width * inner;
      double* dst = gx.data() + (o * ext + start) * inner;
      for (int64_t j = 0; j < width * inner; ++j) dst[j] += src[j];
    }
  };
  return push(std::move(out), node(x).requires_grad, {x.id}, bw, "slice");
}

Var Graph::reshape(Var x, std::vector<int64_t> shape) {
  check_same_graph(x, "reshape");
  const Tensor& xv = node(x).value;
  if (Tensor::count(shape) != xv.size()) {
    throw ShapeError("reshape: cannot view " + xv.shape_str() + " as " +
                     Tensor::shape_str(shape));
  }
  Tensor out(std::move(shape), xv.vec());
  auto bw = [](Graph& g, int32_t self) {
    Node& sn = g.node_at(self);
    const int32_t xid = sn.inputs[0];
    if (!g.node_at(xid).requires_grad) return;
    Tensor& gx = g.grad_buf(xid);
    for (int64_t i = 0; i < sn.grad.size(); ++i) gx[i] += sn.grad[i];
  };
  return push(std::move(out), node(x).requires_grad, {x.id}, bw, "reshape");
}

Var Graph::transpose(Var x, int axis_a, int axis_b) {
  check_same_graph(x, "transpose");
  const Tensor& xv = node(x).value;
  axis_a = check_axis(xv.shape(), axis_a, "transpose");
  axis_b = check_axis(xv.shape(), axis_b, "transpose");
  std::vector<int64_t> out_shape = xv.shape();
  std::swap(out_shape[static_cast<size_t>(axis_a)], out_shape[static_cast<size_t>(axis_b)]);

  const int nd = xv.ndim();
  std::vector<int64_t> in_strides(static_cast<size_t>(nd), 1);
  for (int d = nd - 2; d >= 0; --d) {
    in_strides[static_cast<size_t>(d)] =
        in_strides[static_cast<size_t>(d + 1)] * xv.dim(d + 1);
  }
  // Stride of the output axis d inside the input layout.
  std::vector<int64_t> src_strides = in_strides;
  std::swap(src_strides[static_cast<size_t>(axis_a)], src_strides[static_cast<size_t>(axis_b)]);

  auto permute = [nd](const std::vector<int64_t>& dims, const std::vector<int64_t>& strides,
                      const double* src, double* dst, bool accumulate) {
    std::vector<int64_t> idx(static_cast<size_t>(nd), 0);
    const int64_t total = [&] {
      int64_t t = 1;
      for (int64_t d : dims) t *= d;
      return t;
    }();
    int64_t src_off = 0;
    for (int64_t flat = 0; flat < total; ++flat) {
      if (accumulate) {
        dst[src_off] += src[flat];
      } else {
        dst[flat] = src[src_off];
      }
      for (int d = nd - 1; d >= 0; --d) {
        idx[static_cast<size_t>(d)]++;
        src_off += strides[static_cast<size_t>(d)];
        if (idx[static_cast<size_t>(d)] < dims[static_cast<size_t>(d)]) break;
        src_off -= strides[static_cast<size_t>(d)] * dims[static_cast<size_t>(d)];
        idx[static_cast<size_t>(d)] = 0;
      }
    }
  };

  Tensor out(out_shape);
  permute(out_shape, src_strides, xv.data(), out.data(), false);
  auto bw = [out_shape, src_strides, permute](Graph& g, int32_t self) {
    Node& sn = g.node_at(self);
    const int32_t xid = sn.inputs[0];
    if (!g.node_at(xid).requires_grad) return;
    Tensor& gx = g.grad_buf(xid);
    // Walk output order again, scatter-accumulating into input offsets.
    permute(out_shape, src_strides, sn.grad.data(), gx.data(), true);
  };
  return push(std::move(out), node(x).requires_grad, {x.id}, bw, "transpose");
}

Var Graph::gather_rows(Var x, std::vector<int64_t> indices) {
  check_same_graph(x, "gather_rows");
  const Tensor& xv = node(x).value;
  if (xv.ndim() < 1) throw ShapeError("gather_rows: input must have at least one axis");
  const int64_t rows = xv.dim(0);
  const int64_t row_size = xv.size() / rows;
  for (int64_t idx : indices) {
    if (idx < 0 || idx >= rows) {
      throw ShapeError("gather_rows: index " + std::to_string(idx) + " out of range [0, " +
                       std::to_string(rows) + ")");
    }
  }
  std::vector<int64_t> out_shape = xv.shape();
  out_shape[0] = static_cast<int64_t>(indices.size());
  Tensor out(out_shape);
  for (size_t i = 0; i < indices.size(); ++i) {
    std::memcpy(out.data() + static_cast<int64_t>(i) * row_size,
                xv.data() + indices[i] * row_size,
                sizeof(double) * static_cast<size_t>(row_size));
  }
  auto bw = [indices, row_size](Graph& g, int32_t self) {
    Node& sn = g.node_at(self);
    const int32_t xid = sn.inputs[0];
    if (!g.node_at(xid).requires_grad) return;
    Tensor& gx = g.grad_buf(xid);
    for (size_t i = 0; i < indices.size(); ++i) {
      const double* src = sn.grad.data() + static_cast<int64_t>(i) * row_size;
      double* dst = gx.data() + indices[i] * row_size;
      for (int64_t j = 0; j < row_size; ++j) dst[j] += src[j];
    }
  };
  return push(std::move(out), node(x).requires_grad, {x.id}, bw, "gather_rows");
}

Var Graph::softmax_last(Var x) {
  check_same_graph(x, "softmax_last");
  const Tensor& xv = node(x).value;
  const int64_t n = xv.dim(xv.ndim() - 1);
  const int64_t rows = xv.size() / n;
  Tensor out(xv.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * n;
    double* orow = out.data() + r * n;
    double m = xr[0];
    for (int64_t j = 1; j < n; ++j) m = std::max(m, xr[j]);
    double s = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      orow[j] = std::exp(xr[j] - m);
      s += orow[j];
    }
    for (int64_t j = 0; j < n; ++j) orow[j] /= s;
  }
  auto bw = [rows, n](Graph& g, int32_t self) {
    Node& sn = g.node_at(self);
    const int32_t xid = sn.inputs[0];
    if (!g.node_at(xid).requires_grad) return;
    Tensor& gx = g.grad_buf(xid);
    for (int64_t r = 0; r < rows; ++r) {
      const double* y = sn.value.data() + r * n;
      const double* grow = sn.grad.data() + r * n;
      double dot = 0.0;
      for (int64_t j = 0; j < n; ++j) dot += grow[j] * y[j];
      double* gxr = gx.data() + r * n;
      for (int64_t j = 0; j < n; ++j) gxr[j] += y[j] * (grow[j] - dot);
    }
  };
  return push(std::move(out), node(x).requires_grad, {x.id}, bw, "softmax_last");
}

Var Graph::log_softmax_last(Var x) {
  check_same_graph(x, "log_softmax_last");
  const Tensor& xv = node(x).value;
  const int64_t n = xv.dim(xv.ndim() - 1);
  const int64_t rows = xv.size() / n;
  Tensor out(xv.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * n;
    double* orow = out.data() + r * n;
    double m = xr[0];
    for (int64_t j = 1; j < n; ++j) m = std::max(m, xr[j]);
    double s = 0.0;
    for (int64_t j = 0; j < n; ++j) s += std::exp(xr[j] - m);
    const double lse = m + std::log(s);
    for (int64_t j = 0; j < n; ++j) orow[j] = xr[j] - lse;
  }
  auto bw = [rows, n](Graph& g, int32_t self) {
    Node& sn = g.node_at(self);
    const int32_t xid = sn.inputs[0];
    if (!g.node_at(xid).requires_grad) return;
    Tensor& gx = g.grad_buf(xid);
    for (int64_t r = 0; r < rows; ++r) {
      const double* y = sn.value.data() + r * n;
      const double* grow = sn.grad.data() + r * n;
      double gsum = 0.0;
      for (int64_t j = 0; j < n; ++j) gsum += grow[j];
      double* gxr = gx.data() + r * n;
      for (int64_t j = 0; j < n; ++j) gxr[j] += grow[j] - std::exp(y[j]) * gsum;
    }
  };
  return push(std::move(out), node(x).requires_grad, {x.id}, bw, "log_softmax_last");
}

double global_grad_norm(const std::vector<Parameter*>& params) {
  double ss = 0.0;
  for (const Parameter* p : params) {
    for (double g : p->grad.vec()) ss += g * g;
  }
  return std::sqrt(ss);
}

}  // namespace noisesep
