// Copyright 2026 The noisesep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "doctest.h"
#include "noisesep/contrastive.hpp"
#include "noisesep/errors.hpp"
#include "noisesep/gradcheck.hpp"
#include "noisesep/rng.hpp"
#include "noisesep/separator.hpp"

using namespace noisesep;

namespace {

SeparatorConfig tiny_config() {
  SeparatorConfig cfg;
  cfg.filters = 8;
  cfg.kernel = 16;
  cfg.stride = 8;
  cfg.num_speakers = 2;
  cfg.noise_speaker = true;
  cfg.chunk_size = 4;
  cfg.blocks = 1;
  cfg.hidden = 8;
  cfg.embed_dim = 8;
  return cfg;
}

PclConfig tiny_pcl() {
  PclConfig cfg;
  cfg.negatives = 4;
  cfg.embed_dim = 8;
  return cfg;
}

std::vector<double> random_signal(int64_t n, uint64_t seed, double amp = 0.5) {
  Rng rng(seed);
  std::vector<double> s(static_cast<size_t>(n));
  for (auto& v : s) v = rng.uniform(-amp, amp);
  return s;
}

Tensor random_tensor(std::vector<int64_t> shape, uint64_t seed) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  for (auto& v : t.vec()) v = rng.uniform(-1.0, 1.0);
  return t;
}

// Rows all equal to sign * e_axis.
Tensor axis_rows(int64_t m, int64_t q, int64_t axis, double sign) {
  Tensor t({m, q});
  for (int64_t i = 0; i < m; ++i) t.data()[i * q + axis] = sign;
  return t;
}

Tensor random_unit_rows(int64_t m, int64_t q, uint64_t seed) {
  Tensor t = random_tensor({m, q}, seed);
  for (int64_t i = 0; i < m; ++i) {
    double norm = 0.0;
    for (int64_t j = 0; j < q; ++j) norm += t[i * q + j] * t[i * q + j];
    norm = std::sqrt(norm);
    for (int64_t j = 0; j < q; ++j) t[i * q + j] /= norm;
  }
  return t;
}

PatchSet make_set(Graph& g, Tensor q, Tensor p, Tensor n) {
  PatchSet ps;
  ps.queries = g.constant(std::move(q));
  ps.positives = g.constant(std::move(p));
  ps.negatives = g.constant(std::move(n));
  return ps;
}

}  // namespace

TEST_CASE("contrastive config validation and direction parsing") {
  PclConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.negatives = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = PclConfig{};
  cfg.patch_size = 2;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = PclConfig{};
  cfg.tau = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = PclConfig{};
  cfg.lambda_weight = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = PclConfig{};
  cfg.embed_dim = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  CHECK(parse_pcl_direction("s_to_n") == PclDirection::SToN);
  CHECK(parse_pcl_direction("n_to_s") == PclDirection::NToS);
  CHECK(parse_pcl_direction("both") == PclDirection::Both);
  CHECK_THROWS_AS(parse_pcl_direction("sideways"), ConfigError);
  CHECK(pcl_direction_name(PclDirection::SToN) == "s_to_n");
  CHECK(pcl_direction_name(PclDirection::Both) == "both");
}

TEST_CASE("equal similarities give the uniform-softmax closed form") {
  // All patches are the same unit vector, so every logit matches and the
  // classifier is uniform over M+1 classes.
  {
    Graph g;
    const int64_t m = 256, q = 4;
    PatchSet ps = make_set(g, axis_rows(m, q, 0, 1.0), axis_rows(m, q, 0, 1.0),
                           axis_rows(m, q, 0, 1.0));
    const double loss = g.value(pcl_loss(g, ps, 0.07)).item();
    CHECK(std::fabs(loss - std::log(257.0)) <= 1e-6);
  }
  {
    Graph g;
    PatchSet ps = make_set(g, axis_rows(1, 4, 0, 1.0), axis_rows(1, 4, 0, 1.0),
                           axis_rows(1, 4, 0, 1.0));
    const double loss = g.value(pcl_loss(g, ps, 0.30)).item();
    CHECK(std::fabs(loss - std::log(2.0)) <= 1e-9);
  }
}

TEST_CASE("a fully saturated margin drives the loss to zero") {
  Graph g;
  const int64_t m = 256, q = 4;
  PatchSet ps = make_set(g, axis_rows(m, q, 0, 1.0), axis_rows(m, q, 0, 1.0),
                         axis_rows(m, q, 0, -1.0));
  const double loss = g.value(pcl_loss(g, ps, 0.07)).item();
  CHECK(loss > 0.0);
  CHECK(loss < 1e-10);
}

TEST_CASE("pcl_loss ignores the order of negatives") {
  const int64_t m = 16, q = 8;
  Tensor qs = random_unit_rows(m, q, 1);
  Tensor p = random_unit_rows(m, q, 2);
  Tensor n = random_unit_rows(m, q, 3);
  Tensor n_shuffled({m, q});
  std::vector<int64_t> order(m);
  for (int64_t i = 0; i < m; ++i) order[static_cast<size_t>(i)] = (i * 5 + 3) % m;
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < q; ++j) {
      n_shuffled[i * q + j] = n[order[static_cast<size_t>(i)] * q + j];
    }
  }
  Graph g;
  const double a = g.value(pcl_loss(g, make_set(g, qs, p, n), 0.07)).item();
  const double b = g.value(pcl_loss(g, make_set(g, qs, p, n_shuffled), 0.07)).item();
  CHECK(std::fabs(a - b) <= 1e-12);
}

TEST_CASE("pcl_loss strictly decreases as the positive similarity grows") {
  const int64_t m = 8, q = 4;
  Tensor qs = axis_rows(m, q, 0, 1.0);
  Tensor n = random_unit_rows(m, q, 5);
  auto loss_at = [&](double angle) {
    Tensor p({m, q});
    for (int64_t i = 0; i < m; ++i) {
      p[i * q + 0] = std::cos(angle);
      p[i * q + 1] = std::sin(angle);
    }
    Graph g;
    return g.value(pcl_loss(g, make_set(g, qs, p, n), 0.07)).item();
  };
  // Smaller angle means larger q.p with the negatives untouched.
  CHECK(loss_at(0.2) < loss_at(0.5));
  CHECK(loss_at(0.5) < loss_at(0.9));
  CHECK(loss_at(0.9) < loss_at(1.4));
}

TEST_CASE("sample_patches projects unit patches and is seed-deterministic") {
  SeparatorModel model(tiny_config(), 3);
  PclConfig cfg = tiny_pcl();
  cfg.negatives = 16;
  Graph g;
  Var hp = model.encode(g, random_signal(160, 10));
  Var hn = model.encode(g, random_signal(160, 11));
  Var ht = g.constant(random_tensor({8, 19}, 12));
  Rng rng(99);
  PatchSet ps = sample_patches(g, model, hp, ht, hn, cfg, rng);
  const Tensor& qv = g.value(ps.queries);
  REQUIRE(qv.shape() == std::vector<int64_t>{16, 8});
  REQUIRE(g.value(ps.positives).shape() == std::vector<int64_t>{16, 8});
  REQUIRE(g.value(ps.negatives).shape() == std::vector<int64_t>{16, 8});
  for (const Var& v : {ps.queries, ps.positives, ps.negatives}) {
    const Tensor& t = g.value(v);
    for (int64_t i = 0; i < t.dim(0); ++i) {
      double norm = 0.0;
      for (int64_t j = 0; j < t.dim(1); ++j) norm += t[i * 8 + j] * t[i * 8 + j];
      CHECK(std::fabs(std::sqrt(norm) - 1.0) <= 1e-6);
    }
  }
  for (int64_t f : ps.query_frames) CHECK((f >= 0 && f < 19));
  for (int64_t f : ps.negative_frames) CHECK((f >= 0 && f < 19));

  // Fresh generator with the same seed reproduces the index draws exactly.
  Rng rng2(99);
  PatchSet ps2 = sample_patches(g, model, hp, ht, hn, cfg, rng2);
  CHECK(ps.query_frames == ps2.query_frames);
  CHECK(ps.negative_frames == ps2.negative_frames);

  // Single-frame representations force every index to zero.
  Graph g1;
  Var one = g1.constant(random_tensor({8, 1}, 4));
  Rng rng3(5);
  PatchSet d = sample_patches(g1, model, one, one, one, cfg, rng3);
  for (int64_t f : d.query_frames) CHECK(f == 0);
  for (int64_t f : d.negative_frames) CHECK(f == 0);

  // Mismatched shapes and mismatched projection width are rejected.
  Graph g2;
  Var a = g2.constant(random_tensor({8, 19}, 6));
  Var b = g2.constant(random_tensor({8, 18}, 7));
  Rng rng4(6);
  CHECK_THROWS_AS(sample_patches(g2, model, a, a, b, cfg, rng4), ShapeError);
  CHECK_THROWS_AS(sample_patches(g2, model, a, b, a, cfg, rng4), ShapeError);
  PclConfig wide = cfg;
  wide.embed_dim = 16;
  CHECK_THROWS_AS(sample_patches(g2, model, a, a, a, wide, rng4), ConfigError);
}

TEST_CASE("contrastive gradients reach the projection and the encoder") {
  SeparatorModel model(tiny_config(), 8);
  PclConfig cfg = tiny_pcl();
  Graph g;
  Var hp = model.encode(g, random_signal(160, 20));
  Var hn = model.encode(g, random_signal(160, 21));
  Var ht = g.constant(random_tensor({8, 19}, 22));
  Rng rng(500);
  PatchSet ps = sample_patches(g, model, hp, ht, hn, cfg, rng);
  for (auto* p : model.parameters()) p->zero_grad();
  g.backward(pcl_loss(g, ps, cfg.tau));
  auto nonzero = [](const Parameter& p) {
    for (int64_t i = 0; i < p.grad.size(); ++i) {
      if (p.grad[i] != 0.0) return true;
    }
    return false;
  };
  CHECK(nonzero(model.patch_w1()));
  CHECK(nonzero(model.patch_w2()));
  bool encoder_touched = false;
  for (auto* p : model.parameters()) {
    if (p->name == "encoder.weight" && nonzero(*p)) encoder_touched = true;
  }
  CHECK(encoder_touched);
}

TEST_CASE("pcl_total counts comparisons and detaches the truth branch") {
  SeparatorModel model(tiny_config(), 9);
  PclConfig cfg = tiny_pcl();
  cfg.direction = PclDirection::SToN;
  Graph g;
  ForwardResult f = model.forward(g, random_signal(160, 30));
  std::vector<Tensor> truth{model.encode_repr(random_signal(160, 31)),
                            model.encode_repr(random_signal(160, 32))};
  Tensor truth_noise = model.encode_repr(random_signal(160, 33));
  Rng rng(2);
  PclResult r = pcl_total(g, model, f.masked, truth, truth_noise, cfg, rng, {0, 1});
  CHECK(r.comparisons == 2 * cfg.negatives);  // one set per human speaker
  CHECK(r.sets.size() == 2);
  CHECK(g.value(r.value).size() == 1);
  CHECK(g.value(r.value).item() > 0.0);
  for (Var tv : r.truth_vars) {
    CHECK(g.is_leaf(tv));
    CHECK_FALSE(g.requires_grad(tv));
  }

  cfg.direction = PclDirection::Both;
  Rng rng2(2);
  PclResult rb = pcl_total(g, model, f.masked, truth, truth_noise, cfg, rng2, {1, 0});
  CHECK(rb.comparisons == 3 * cfg.negatives);
  CHECK(rb.sets.size() == 3);
  for (Var tv : rb.truth_vars) {
    CHECK(g.is_leaf(tv));
    CHECK_FALSE(g.requires_grad(tv));
  }
}

TEST_CASE("pcl_total validates its inputs") {
  SeparatorModel model(tiny_config(), 9);
  PclConfig cfg = tiny_pcl();
  Graph g;
  ForwardResult f = model.forward(g, random_signal(160, 30));
  std::vector<Tensor> truth{model.encode_repr(random_signal(160, 31)),
                            model.encode_repr(random_signal(160, 32))};
  Tensor truth_noise = model.encode_repr(random_signal(160, 33));
  Rng rng(2);

  // Missing noise representation: model without the noise speaker.
  SeparatorConfig no_noise_cfg = tiny_config();
  no_noise_cfg.noise_speaker = false;
  SeparatorModel no_noise(no_noise_cfg, 9);
  Graph g2;
  ForwardResult f2 = no_noise.forward(g2, random_signal(160, 30));
  CHECK_THROWS_AS(pcl_total(g2, no_noise, f2.masked, truth, truth_noise, cfg, rng, {0, 1}),
                  ConfigError);

  // Noise-to-speech without an encoded ground-truth noise stem.
  cfg.direction = PclDirection::NToS;
  CHECK_THROWS_AS(pcl_total(g, model, f.masked, truth, Tensor(), cfg, rng, {0, 1}), ConfigError);

  // Bad permutations and truth counts.
  cfg.direction = PclDirection::SToN;
  CHECK_THROWS_AS(pcl_total(g, model, f.masked, truth, truth_noise, cfg, rng, {0, 0}),
                  ContractError);
  CHECK_THROWS_AS(pcl_total(g, model, f.masked, truth, truth_noise, cfg, rng, {0}),
                  ContractError);
  std::vector<Tensor> short_truth{truth[0]};
  CHECK_THROWS_AS(pcl_total(g, model, f.masked, short_truth, truth_noise, cfg, rng, {0, 1}),
                  ContractError);
}

TEST_CASE("pcl_total is bit-reproducible for a fixed seed") {
  SeparatorModel model(tiny_config(), 14);
  PclConfig cfg = tiny_pcl();
  std::vector<Tensor> truth{model.encode_repr(random_signal(160, 41)),
                            model.encode_repr(random_signal(160, 42))};
  Tensor truth_noise = model.encode_repr(random_signal(160, 43));
  auto run = [&]() {
    Graph g;
    ForwardResult f = model.forward(g, random_signal(160, 40));
    Rng rng(777);
    return g.value(pcl_total(g, model, f.masked, truth, truth_noise, cfg, rng, {0, 1}).value)
        .item();
  };
  CHECK(run() == run());
}

TEST_CASE("contrastive term gradients match finite differences through the whole model") {
  SeparatorModel model(tiny_config(), 20260814);
  PclConfig cfg = tiny_pcl();
  cfg.direction = PclDirection::Both;
  const std::vector<double> mix = random_signal(160, 50);
  // Ground-truth representations are frozen snapshots: the loss must treat
  // them as constants, which is exactly the detached-truth contract.
  std::vector<Tensor> truth{model.encode_repr(random_signal(160, 51)),
                            model.encode_repr(random_signal(160, 52))};
  Tensor truth_noise = model.encode_repr(random_signal(160, 53));
  auto loss = [&](Graph& g) -> Var {
    ForwardResult f = model.forward(g, mix);
    Rng rng(31337);
    return pcl_total(g, model, f.masked, truth, truth_noise, cfg, rng, {0, 1}).value;
  };
  GradCheckReport rep = grad_check("pcl_total", loss, model.parameters(), 1e-5, 1e-4);
  INFO(rep.name, ": max_rel_err=", rep.max_rel_err, " worst=", rep.worst_location,
       " failure=", rep.failure);
  CHECK(rep.pass);
}
