// Copyright 2026 The noisesep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "noisesep/autodiff.hpp"
#include "noisesep/rng.hpp"

using namespace noisesep;

namespace {

Tensor vec(std::vector<double> v) {
  const int64_t n = static_cast<int64_t>(v.size());
  return Tensor({n}, std::move(v));
}

Tensor random_tensor(std::vector<int64_t> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-1.0, 1.0);
  return t;
}

}  // namespace

TEST_CASE("conv1d output length and values") {
  Graph g;
  Var x = g.constant(Tensor({1, 32000}));
  Var w = g.constant(Tensor({64, 1, 16}));
  Var y = g.conv1d(x, w, {}, 8);
  CHECK(g.value(y).dim(0) == 64);
  CHECK(g.value(y).dim(1) == 3999);

  Var x2 = g.constant(Tensor({1, 4}, {1, 2, 3, 4}));
  Var w2 = g.constant(Tensor({1, 1, 2}, {1, 1}));
  Var y2 = g.conv1d(x2, w2, {}, 1);
  CHECK(g.value(y2).vec() == std::vector<double>{3, 5, 7});
  Var y3 = g.conv1d(x2, w2, {}, 2);
  CHECK(g.value(y3).vec() == std::vector<double>{3, 7});
  Var b = g.constant(vec({10}));
  Var y4 = g.conv1d(x2, w2, b, 2);
  CHECK(g.value(y4).vec() == std::vector<double>{13, 17});
}

TEST_CASE("conv1d shape errors") {
  Graph g;
  Var x = g.constant(Tensor({2, 8}));
  Var w = g.constant(Tensor({4, 3, 2}));
  CHECK_THROWS_AS(g.conv1d(x, w, {}, 1), ShapeError);
  Var w2 = g.constant(Tensor({4, 2, 16}));
  CHECK_THROWS_AS(g.conv1d(x, w2, {}, 1), ShapeError);  // kernel longer than input
  Var w3 = g.constant(Tensor({4, 2, 2}));
  CHECK_THROWS_AS(g.conv1d(x, w3, {}, 0), ShapeError);
}

TEST_CASE("conv1d_transpose values and adjoint identity") {
  Graph g;
  Var x = g.constant(Tensor({1, 2}, {1, 2}));
  Var w = g.constant(Tensor({1, 1, 3}, {1, 10, 100}));
  Var y = g.conv1d_transpose(x, w, {}, 2);
  CHECK(g.value(y).shape() == std::vector<int64_t>{1, 5});
  CHECK(g.value(y).vec() == std::vector<double>{1, 10, 102, 20, 200});

  // <conv(x, w), y> == <x, conv_transpose(y, w)> whenever (T - k) % stride == 0.
  Rng rng(7);
  const int64_t cin = 3, cout = 2, k = 5, stride = 3, t_len = 20;
  Tensor xt = random_tensor({cin, t_len}, rng);
  Tensor wt = random_tensor({cout, cin, k}, rng);
  const int64_t frames = (t_len - k) / stride + 1;
  Tensor yt = random_tensor({cout, frames}, rng);
  Var cx = g.constant(xt), cw = g.constant(wt), cy = g.constant(yt);
  const Tensor& fwd = g.value(g.conv1d(cx, cw, {}, static_cast<int>(stride)));
  const Tensor& adj = g.value(g.conv1d_transpose(cy, cw, {}, static_cast<int>(stride)));
  double lhs = 0.0, rhs = 0.0;
  for (int64_t i = 0; i < fwd.size(); ++i) lhs += fwd[i] * yt[i];
  for (int64_t i = 0; i < adj.size(); ++i) rhs += adj[i] * xt[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("relu forward and subgradient at zero") {
  Parameter p("p", vec({-1, 0, 2}));
  Graph g;
  Var y = g.relu(g.param(p));
  CHECK(g.value(y).vec() == std::vector<double>{0, 0, 2});
  g.backward(g.reduce_sum(y));
  CHECK(p.grad.vec() == std::vector<double>{0, 0, 1});
}

TEST_CASE("prelu forward and gradients") {
  Parameter x("x", vec({-2, 0, 3}));
  Parameter a("a", vec({0.5}));
  Graph g;
  Var y = g.prelu(g.param(x), g.param(a));
  CHECK(g.value(y).vec() == std::vector<double>{-1, 0, 3});
  g.backward(g.reduce_sum(y));
  CHECK(x.grad.vec() == std::vector<double>{0.5, 0, 1});
  CHECK(a.grad.vec() == std::vector<double>{-2});
}

TEST_CASE("l2_normalize values") {
  Graph g;
  Var y = g.l2_normalize(g.constant(vec({3, 4})), 0, 1e-12);
  CHECK(g.value(y)[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(g.value(y)[1] == doctest::Approx(0.8).epsilon(1e-15));
  // Norm below eps: divides by eps instead.
  Var z = g.l2_normalize(g.constant(vec({0, 0})), 0, 1e-12);
  CHECK(g.value(z).vec() == std::vector<double>{0, 0});
  // Row-wise over the last axis of a matrix.
  Var m = g.l2_normalize(g.constant(Tensor({2, 2}, {3, 4, 0, 5})), 1, 1e-12);
  CHECK(g.value(m).vec() == std::vector<double>{0.6, 0.8, 0, 1});
}

TEST_CASE("backward of a linear sum gives unit gradients") {
  Parameter p("p", vec({5, -7, 11}));
  Graph g;
  g.backward(g.reduce_sum(g.param(p)));
  CHECK(p.grad.vec() == std::vector<double>{1, 1, 1});
}

TEST_CASE("parameter gradients accumulate across backward calls") {
  Parameter p("p", vec({1, 2}));
  Graph g;
  Var loss = g.reduce_sum(g.param(p));
  g.backward(loss);
  g.backward(loss);
  CHECK(p.grad.vec() == std::vector<double>{2, 2});
  p.zero_grad();
  CHECK(p.grad.vec() == std::vector<double>{0, 0});
}

TEST_CASE("unused parameters get exactly zero gradient") {
  Parameter a("a", vec({1, 2}));
  Parameter b("b", vec({3, 4}));
  Graph g;
  Var va = g.param(a);
  (void)g.param(b);
  g.backward(g.reduce_sum(va));
  CHECK(b.grad.vec() == std::vector<double>{0, 0});
}

TEST_CASE("detach blocks gradient flow") {
  Parameter p("p", vec({1, 2}));
  Graph g;
  Var y = g.scale(g.param(p), 3.0);
  g.backward(g.reduce_sum(g.detach(y)));
  CHECK(p.grad.vec() == std::vector<double>{0, 0});
}

TEST_CASE("backward requires a scalar loss") {
  Graph g;
  Parameter p("p", vec({1, 2}));
  Var v = g.param(p);
  CHECK_THROWS_AS(g.backward(v), ContractError);
}

TEST_CASE("vars from different graphs are rejected") {
  Graph g1, g2;
  Var a = g1.constant(vec({1}));
  Var b = g2.constant(vec({1}));
  CHECK_THROWS_AS(g1.add(a, b), ContractError);
}

TEST_CASE("non-finite results are rejected immediately") {
  Graph g;
  CHECK_THROWS_AS(g.log(g.constant(vec({-1}))), NumericError);
  CHECK_THROWS_AS(g.log(g.constant(vec({0}))), NumericError);
}

TEST_CASE("matmul forward and backward") {
  Graph g;
  Var a = g.constant(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  Var b = g.constant(Tensor({3, 2}, {7, 8, 9, 10, 11, 12}));
  const Tensor& y = g.value(g.matmul(a, b));
  CHECK(y.vec() == std::vector<double>{58, 64, 139, 154});

  Parameter pa("a", Tensor({2, 2}, {1, 2, 3, 4}));
  Parameter pb("b", Tensor({2, 2}, {5, 6, 7, 8}));
  Graph g2;
  g2.backward(g2.reduce_sum(g2.matmul(g2.param(pa), g2.param(pb))));
  // dA = ones @ B^T, dB = A^T @ ones.
  CHECK(pa.grad.vec() == std::vector<double>{11, 15, 11, 15});
  CHECK(pb.grad.vec() == std::vector<double>{4, 4, 6, 6});

  // Batched form.
  Graph g3;
  Var ba = g3.constant(Tensor({2, 1, 2}, {1, 2, 3, 4}));
  Var bb = g3.constant(Tensor({2, 2, 1}, {1, 1, 10, 100}));
  CHECK(g3.value(g3.matmul(ba, bb)).vec() == std::vector<double>{3, 430});
}

TEST_CASE("affine applies to every leading row") {
  Graph g;
  Var x = g.constant(Tensor({2, 2, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1, 1, 1, 1}));
  Var w = g.constant(Tensor({3, 2}, {1, 2, 3, 4, 5, 6}));
  Var b = g.constant(vec({10, 20}));
  const Tensor& y = g.value(g.affine(x, w, b));
  CHECK(y.shape() == std::vector<int64_t>{2, 2, 2});
  CHECK(y.vec() == std::vector<double>{11, 22, 13, 24, 15, 26, 19, 32});
  CHECK_THROWS_AS(g.affine(x, g.constant(Tensor({4, 2})), {}), ShapeError);
}

TEST_CASE("layer_norm standardizes the last axis") {
  Graph g;
  Var x = g.constant(Tensor({2, 4}, {1, 2, 3, 4, -10, 0, 10, 20}));
  Var gain = g.constant(vec({1, 1, 1, 1}));
  Var bias = g.constant(vec({0, 0, 0, 0}));
  const Tensor& y = g.value(g.layer_norm(x, gain, bias, 1e-8));
  for (int64_t r = 0; r < 2; ++r) {
    double mean = 0.0, var = 0.0;
    for (int64_t j = 0; j < 4; ++j) mean += y[r * 4 + j];
    mean /= 4;
    for (int64_t j = 0; j < 4; ++j) var += (y[r * 4 + j] - mean) * (y[r * 4 + j] - mean);
    var /= 4;
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-6));
  }
  Var gain2 = g.constant(vec({2, 2, 2, 2}));
  Var bias2 = g.constant(vec({1, 1, 1, 1}));
  const Tensor& y2 = g.value(g.layer_norm(x, gain2, bias2, 1e-8));
  for (int64_t i = 0; i < 8; ++i) CHECK(y2[i] == doctest::Approx(2 * y[i] + 1).epsilon(1e-12));
}

TEST_CASE("reductions") {
  Graph g;
  CHECK(g.value(g.reduce_sum(g.constant(vec({2, 4, 6}))))[0] == 12.0);
  CHECK(g.value(g.reduce_mean(g.constant(vec({2, 4, 6}))))[0] == 4.0);
  const Tensor& s = g.value(g.sum_last(g.constant(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}))));
  CHECK(s.shape() == std::vector<int64_t>{2});
  CHECK(s.vec() == std::vector<double>{6, 15});
  CHECK(g.value(g.sum_last(g.constant(vec({1, 2})))).shape() == std::vector<int64_t>{1});
}

TEST_CASE("elementwise arithmetic and scalar ops") {
  Parameter x("x", vec({1, 2}));
  Parameter s("s", vec({3}));
  Graph g;
  Var vx = g.param(x);
  Var vs = g.param(s);
  Var y = g.scale_by(vx, vs);
  CHECK(g.value(y).vec() == std::vector<double>{3, 6});
  g.backward(g.reduce_sum(y));
  CHECK(x.grad.vec() == std::vector<double>{3, 3});
  CHECK(s.grad.vec() == std::vector<double>{3});

  CHECK(g.value(g.add_scalar(vx, 10)).vec() == std::vector<double>{11, 12});
  CHECK(g.value(g.scale(vx, -2)).vec() == std::vector<double>{-2, -4});
  CHECK(g.value(g.mul(vx, vx)).vec() == std::vector<double>{1, 4});
  CHECK(g.value(g.sub(vx, vx)).vec() == std::vector<double>{0, 0});
  CHECK_THROWS_AS(g.add(vx, g.constant(vec({1, 2, 3}))), ShapeError);
}

TEST_CASE("clamp_min values and subgradient") {
  Parameter x("x", vec({-5, 0, 5}));
  Graph g;
  Var y = g.clamp_min(g.param(x), 0.0);
  CHECK(g.value(y).vec() == std::vector<double>{0, 0, 5});
  g.backward(g.reduce_sum(y));
  CHECK(x.grad.vec() == std::vector<double>{0, 0, 1});
}

TEST_CASE("exp and log invert each other") {
  Graph g;
  Var x = g.constant(vec({0.5, 1, 2}));
  const Tensor& y = g.value(g.log(g.exp(x)));
  for (int64_t i = 0; i < 3; ++i) {
    CHECK(y[i] == doctest::Approx(g.value(x)[i]).epsilon(1e-15));
  }
}

TEST_CASE("concat and slice invert each other") {
  Graph g;
  Var a = g.constant(Tensor({2, 2}, {1, 2, 3, 4}));
  Var b = g.constant(Tensor({2, 3}, {5, 6, 7, 8, 9, 10}));
  Var c = g.concat({a, b}, 1);
  CHECK(g.value(c).shape() == std::vector<int64_t>{2, 5});
  CHECK(g.value(c).vec() == std::vector<double>{1, 2, 5, 6, 7, 3, 4, 8, 9, 10});
  CHECK(g.value(g.slice(c, 1, 0, 2)).vec() == g.value(a).vec());
  CHECK(g.value(g.slice(c, 1, 2, 5)).vec() == g.value(b).vec());
  CHECK_THROWS_AS(g.slice(c, 1, 3, 3), ShapeError);
  CHECK_THROWS_AS(g.concat({a, g.constant(Tensor({3, 2}))}, 1), ShapeError);

  // Gradient splits back to the pieces.
  Parameter pa("a", Tensor({1, 2}, {1, 1}));
  Parameter pb("b", Tensor({1, 1}, {1}));
  Graph g2;
  Var cc = g2.concat({g2.param(pa), g2.param(pb)}, 1);
  g2.backward(g2.reduce_sum(g2.mul(cc, g2.constant(Tensor({1, 3}, {1, 2, 3})))));
  CHECK(pa.grad.vec() == std::vector<double>{1, 2});
  CHECK(pb.grad.vec() == std::vector<double>{3});
}

TEST_CASE("reshape and transpose") {
  Graph g;
  Var x = g.constant(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  CHECK(g.value(g.reshape(x, {3, 2})).vec() == g.value(x).vec());
  CHECK_THROWS_AS(g.reshape(x, {4, 2}), ShapeError);

  const Tensor& t = g.value(g.transpose(x, 0, 1));
  CHECK(t.shape() == std::vector<int64_t>{3, 2});
  CHECK(t.vec() == std::vector<double>{1, 4, 2, 5, 3, 6});
  // Double transpose restores the input.
  CHECK(g.value(g.transpose(g.transpose(x, 0, 1), 0, 1)).vec() == g.value(x).vec());

  // 3-D middle/last swap, checked elementwise.
  Rng rng(3);
  Tensor cube = random_tensor({2, 3, 4}, rng);
  Var vc = g.constant(cube);
  const Tensor& tc = g.value(g.transpose(vc, 1, 2));
  CHECK(tc.shape() == std::vector<int64_t>{2, 4, 3});
  for (int64_t i = 0; i < 2; ++i) {
    for (int64_t j = 0; j < 3; ++j) {
      for (int64_t k = 0; k < 4; ++k) {
        CHECK(tc[(i * 4 + k) * 3 + j] == cube[(i * 3 + j) * 4 + k]);
      }
    }
  }

  // Transpose backward routes gradients to the matching inputs.
  Parameter p("p", Tensor({2, 2}, {1, 2, 3, 4}));
  Graph g2;
  Var y = g2.transpose(g2.param(p), 0, 1);
  g2.backward(g2.reduce_sum(g2.mul(y, g2.constant(Tensor({2, 2}, {10, 20, 30, 40})))));
  CHECK(p.grad.vec() == std::vector<double>{10, 30, 20, 40});
}

TEST_CASE("gather_rows selects and scatter-adds") {
  Parameter p("p", Tensor({3, 2}, {1, 2, 3, 4, 5, 6}));
  Graph g;
  Var y = g.gather_rows(g.param(p), {2, 0, 2});
  CHECK(g.value(y).shape() == std::vector<int64_t>{3, 2});
  CHECK(g.value(y).vec() == std::vector<double>{5, 6, 1, 2, 5, 6});
  g.backward(g.reduce_sum(y));
  CHECK(p.grad.vec() == std::vector<double>{1, 1, 0, 0, 2, 2});
  CHECK_THROWS_AS(g.gather_rows(g.param(p), {3}), ShapeError);
}

TEST_CASE("softmax rows sum to one and match log_softmax") {
  Graph g;
  Var x = g.constant(Tensor({2, 2}, {0, std::log(3.0), 100, 100}));
  const Tensor& sm = g.value(g.softmax_last(x));
  CHECK(sm[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(sm[1] == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(sm[2] == doctest::Approx(0.5).epsilon(1e-12));
  const Tensor& lsm = g.value(g.log_softmax_last(x));
  for (int64_t i = 0; i < 4; ++i) {
    CHECK(lsm[i] == doctest::Approx(std::log(sm[i])).epsilon(1e-12));
  }
  // Large inputs stay stable.
  Var big = g.constant(Tensor({1, 2}, {1000, 1000}));
  CHECK(g.value(g.softmax_last(big))[0] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("global_grad_norm") {
  Parameter a("a", vec({3}));
  Parameter b("b", vec({4}));
  a.grad[0] = 3;
  b.grad[0] = 4;
  CHECK(global_grad_norm({&a, &b}) == 5.0);
}
