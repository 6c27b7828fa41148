// Copyright 2026 The noisesep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "noisesep/separator.hpp"

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "noisesep/errors.hpp"
#include "noisesep/rng.hpp"

namespace noisesep {
namespace {

uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// Uniform +/- 1/sqrt(fan_in), seeded by (model seed, tensor name) so each
// tensor's draw is independent of construction order.
Tensor init_uniform(const std::string& name, std::vector<int64_t> shape, int64_t fan_in,
                    uint64_t seed) {
  Tensor t(std::move(shape));
  Rng rng(Rng::mix(seed, fnv1a64(name)));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.vec()) v = rng.uniform(-bound, bound);
  return t;
}

constexpr double kNormEps = 1e-5;

}  // namespace

BlockKind parse_block_kind(const std::string& s) {
  if (s == "recurrent") return BlockKind::Recurrent;
  if (s == "attention") return BlockKind::Attention;
  throw ConfigError("block kind must be 'recurrent' or 'attention', got '" + s + "'");
}

std::string block_kind_name(BlockKind k) {
  return k == BlockKind::Recurrent ? "recurrent" : "attention";
}

void SeparatorConfig::validate() const {
  if (filters < 1) throw ConfigError("separator: filters must be >= 1");
  if (kernel < 1) throw ConfigError("separator: kernel must be >= 1");
  if (stride < 1 || stride > kernel) {
    throw ConfigError("separator: stride must be in [1, kernel], got " + std::to_string(stride) +
                      " with kernel " + std::to_string(kernel));
  }
  if (num_speakers < 2 || num_speakers > 3) {
    throw ConfigError("separator: num_speakers must be 2 or 3, got " +
                      std::to_string(num_speakers));
  }
  if (chunk_size < 2 || chunk_size % 2 != 0) {
    throw ConfigError("separator: chunk_size must be even and >= 2, got " +
                      std::to_string(chunk_size));
  }
  if (blocks < 1) throw ConfigError("separator: blocks must be >= 1");
  if (hidden < 1) throw ConfigError("separator: hidden must be >= 1");
  if (embed_dim < 1) throw ConfigError("separator: embed_dim must be >= 1");
}

ChunkPlan chunk_plan(int64_t l, int64_t k) {
  if (k < 2 || k % 2 != 0) {
    throw ParamError("chunk: chunk size must be even and >= 2, got " + std::to_string(k));
  }
  if (l < 1) throw ParamError("chunk: representation length must be >= 1, got " + std::to_string(l));
  ChunkPlan p;
  p.hop = k / 2;
  const int64_t tail = l <= k ? 0 : l - k;
  const int64_t steps = (tail + p.hop - 1) / p.hop;
  p.l_pad = k + steps * p.hop;
  p.num_chunks = steps + 1;
  p.pad = p.l_pad - l;
  return p;
}

ChunkedRepr chunk(const Tensor& h, int64_t k) {
  if (h.ndim() != 2) {
    throw ShapeError("chunk: expected a 2-D representation, got " + h.shape_str());
  }
  const int64_t n = h.dim(0);
  const int64_t l = h.dim(1);
  const ChunkPlan p = chunk_plan(l, k);
  ChunkedRepr c;
  c.original_l = l;
  c.pad_amount = p.pad;
  c.values = Tensor({n, k, p.num_chunks});
  double* out = c.values.data();
  const double* in = h.data();
  for (int64_t ch = 0; ch < n; ++ch) {
    for (int64_t kk = 0; kk < k; ++kk) {
      for (int64_t s = 0; s < p.num_chunks; ++s) {
        const int64_t src = s * p.hop + kk;
        out[(ch * k + kk) * p.num_chunks + s] = src < l ? in[ch * l + src] : 0.0;
      }
    }
  }
  return c;
}

Tensor overlap_add(const ChunkedRepr& c) {
  if (c.values.ndim() != 3) {
    throw ShapeError("overlap_add: expected N x K x S values, got " + c.values.shape_str());
  }
  const int64_t n = c.values.dim(0);
  const int64_t k = c.values.dim(1);
  const int64_t s_cnt = c.values.dim(2);
  if (k < 2 || k % 2 != 0) {
    throw ShapeError("overlap_add: chunk size must be even and >= 2, got " + std::to_string(k));
  }
  const int64_t hop = k / 2;
  const int64_t l_pad = (s_cnt - 1) * hop + k;
  const int64_t l = c.original_l;
  if (l < 1 || l > l_pad) {
    throw ContractError("overlap_add: original_l " + std::to_string(l) +
                        " outside [1, " + std::to_string(l_pad) + "]");
  }
  if (c.pad_amount != l_pad - l) {
    throw ContractError("overlap_add: pad_amount " + std::to_string(c.pad_amount) +
                        " inconsistent with original_l (expected " +
                        std::to_string(l_pad - l) + ")");
  }
  Tensor out({n, l});
  std::vector<double> acc(static_cast<size_t>(l_pad));
  std::vector<int> cnt(static_cast<size_t>(l_pad));
  const double* in = c.values.data();
  for (int64_t ch = 0; ch < n; ++ch) {
    std::fill(acc.begin(), acc.end(), 0.0);
    std::fill(cnt.begin(), cnt.end(), 0);
    for (int64_t kk = 0; kk < k; ++kk) {
      for (int64_t s = 0; s < s_cnt; ++s) {
        const int64_t r = s * hop + kk;
        acc[static_cast<size_t>(r)] += in[(ch * k + kk) * s_cnt + s];
        ++cnt[static_cast<size_t>(r)];
      }
    }
    for (int64_t r = 0; r < l; ++r) {
      out.data()[ch * l + r] = acc[static_cast<size_t>(r)] / cnt[static_cast<size_t>(r)];
    }
  }
  return out;
}

Var chunk_rows(Graph& g, Var x, int64_t k) {
  const auto& shape = g.value(x).shape();
  if (shape.size() != 2) {
    throw ShapeError("chunk_rows: expected [L, N], got " + Tensor::shape_str(shape));
  }
  const int64_t l = shape[0];
  const int64_t n = shape[1];
  const ChunkPlan p = chunk_plan(l, k);
  Var xp = x;
  if (p.pad > 0) xp = g.concat({x, g.constant(Tensor::zeros({p.pad, n}))}, 0);
  std::vector<int64_t> idx;
  idx.reserve(static_cast<size_t>(p.num_chunks * k));
  for (int64_t s = 0; s < p.num_chunks; ++s) {
    for (int64_t kk = 0; kk < k; ++kk) idx.push_back(s * p.hop + kk);
  }
  return g.reshape(g.gather_rows(xp, std::move(idx)), {p.num_chunks, k, n});
}

Var overlap_add_rows(Graph& g, Var c, int64_t original_l) {
  const auto& shape = g.value(c).shape();
  if (shape.size() != 3) {
    throw ShapeError("overlap_add_rows: expected [S, K, N], got " + Tensor::shape_str(shape));
  }
  const int64_t s_cnt = shape[0];
  const int64_t k = shape[1];
  const int64_t n = shape[2];
  if (k < 2 || k % 2 != 0) {
    throw ShapeError("overlap_add_rows: chunk size must be even and >= 2, got " +
                     std::to_string(k));
  }
  const int64_t hop = k / 2;
  const int64_t l_pad = (s_cnt - 1) * hop + k;
  if (original_l < 1 || original_l > l_pad) {
    throw ParamError("overlap_add_rows: original length " + std::to_string(original_l) +
                     " outside [1, " + std::to_string(l_pad) + "]");
  }
  // With hop = K/2 every padded row is covered by one or two chunks. Missing
  // second contributors point at an appended all-zero row so both gathers stay
  // rectangular.
  const int64_t zero_row = s_cnt * k;
  std::vector<int64_t> idx_a(static_cast<size_t>(l_pad), zero_row);
  std::vector<int64_t> idx_b(static_cast<size_t>(l_pad), zero_row);
  std::vector<int> cnt(static_cast<size_t>(l_pad), 0);
  for (int64_t s = 0; s < s_cnt; ++s) {
    for (int64_t kk = 0; kk < k; ++kk) {
      const size_t r = static_cast<size_t>(s * hop + kk);
      if (cnt[r] == 0) {
        idx_a[r] = s * k + kk;
      } else if (cnt[r] == 1) {
        idx_b[r] = s * k + kk;
      } else {
        throw ContractError("overlap_add_rows: more than two chunks cover one row");
      }
      ++cnt[r];
    }
  }
  Tensor w({l_pad, n});
  for (int64_t r = 0; r < l_pad; ++r) {
    const double inv = 1.0 / cnt[static_cast<size_t>(r)];
    for (int64_t j = 0; j < n; ++j) w.data()[r * n + j] = inv;
  }
  Var flat = g.reshape(c, {s_cnt * k, n});
  Var flatz = g.concat({flat, g.constant(Tensor::zeros({1, n}))}, 0);
  Var summed = g.add(g.gather_rows(flatz, std::move(idx_a)), g.gather_rows(flatz, std::move(idx_b)));
  Var out = g.mul(summed, g.constant(std::move(w)));
  if (original_l < l_pad) out = g.slice(out, 0, 0, original_l);
  return out;
}

SeparatorModel::SeparatorModel(SeparatorConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const int64_t n = cfg_.filters;
  const int64_t h = cfg_.hidden;
  const int64_t k = cfg_.kernel;
  const int64_t q = cfg_.embed_dim;
  const int64_t g_cnt = cfg_.num_sources();
  auto uni = [&](const std::string& name, std::vector<int64_t> shape, int64_t fan_in) {
    return Parameter(name, init_uniform(name, std::move(shape), fan_in, seed));
  };
  auto fill = [&](const std::string& name, std::vector<int64_t> shape, double v) {
    return Parameter(name, Tensor::full(std::move(shape), v));
  };
  enc_w_ = uni("encoder.weight", {n, 1, k}, k);
  enc_b_ = fill("encoder.bias", {n}, 0.0);
  norm_g_ = fill("masknet.norm.gain", {n}, 1.0);
  norm_b_ = fill("masknet.norm.bias", {n}, 0.0);
  in_w_ = uni("masknet.input.weight", {n, n}, n);
  in_b_ = fill("masknet.input.bias", {n}, 0.0);
  blocks_.resize(static_cast<size_t>(cfg_.blocks));
  for (int64_t b = 0; b < cfg_.blocks; ++b) {
    Block& blk = blocks_[static_cast<size_t>(b)];
    const std::string base = "masknet.block" + std::to_string(b);
    for (int pi = 0; pi < 2; ++pi) {
      PathUnit& u = pi == 0 ? blk.intra : blk.inter;
      const std::string p = base + (pi == 0 ? ".intra" : ".inter");
      if (cfg_.block_kind == BlockKind::Recurrent) {
        u.wz = uni(p + ".gru.wz", {n, h}, n);
        u.wr = uni(p + ".gru.wr", {n, h}, n);
        u.wh = uni(p + ".gru.wh", {n, h}, n);
        u.uz = uni(p + ".gru.uz", {h, h}, h);
        u.ur = uni(p + ".gru.ur", {h, h}, h);
        u.uh = uni(p + ".gru.uh", {h, h}, h);
        u.bz = fill(p + ".gru.bz", {h}, 0.0);
        u.br = fill(p + ".gru.br", {h}, 0.0);
        u.bh = fill(p + ".gru.bh", {h}, 0.0);
        u.proj_w = uni(p + ".proj.weight", {h, n}, h);
        u.proj_b = fill(p + ".proj.bias", {n}, 0.0);
      } else {
        u.wq = uni(p + ".attn.wq", {n, n}, n);
        u.wk = uni(p + ".attn.wk", {n, n}, n);
        u.wv = uni(p + ".attn.wv", {n, n}, n);
        u.wo = uni(p + ".attn.wo", {n, n}, n);
        u.bo = fill(p + ".attn.bo", {n}, 0.0);
      }
      u.norm_g = fill(p + ".norm.gain", {n}, 1.0);
      u.norm_b = fill(p + ".norm.bias", {n}, 0.0);
    }
  }
  prelu_ = fill("masknet.prelu", {1}, 0.25);
  widen_w_ = uni("masknet.widen.weight", {n, g_cnt * n}, n);
  widen_b_ = fill("masknet.widen.bias", {g_cnt * n}, 0.0);
  head_w1_ = uni("masknet.head.w1", {n, 2 * n}, n);
  head_b1_ = fill("masknet.head.b1", {2 * n}, 0.0);
  head_w2_ = uni("masknet.head.w2", {2 * n, n}, 2 * n);
  head_b2_ = fill("masknet.head.b2", {n}, 0.0);
  dec_w_ = uni("decoder.weight", {n, 1, k}, n);
  dec_b_ = fill("decoder.bias", {1}, 0.0);
  patch_w1_ = uni("patch.proj1.weight", {n, q}, n);
  // Slightly positive so the all-zero frames a rectified encoder emits land on
  // the smooth side of the projection's inner ReLU instead of exactly on it.
  patch_b1_ = fill("patch.proj1.bias", {q}, 0.01);
  patch_w2_ = uni("patch.proj2.weight", {q, q}, q);
  patch_b2_ = fill("patch.proj2.bias", {q}, 0.0);
}

std::vector<Parameter*> SeparatorModel::parameters() {
  std::vector<Parameter*> ps{&enc_w_, &enc_b_, &norm_g_, &norm_b_, &in_w_, &in_b_};
  for (auto& blk : blocks_) {
    for (PathUnit* u : {&blk.intra, &blk.inter}) {
      for (Parameter* p : {&u->wz, &u->wr, &u->wh, &u->uz, &u->ur, &u->uh, &u->bz, &u->br,
                           &u->bh, &u->proj_w, &u->proj_b, &u->wq, &u->wk, &u->wv, &u->wo,
                           &u->bo, &u->norm_g, &u->norm_b}) {
        if (!p->value.empty()) ps.push_back(p);
      }
    }
  }
  for (Parameter* p : {&prelu_, &widen_w_, &widen_b_, &head_w1_, &head_b1_, &head_w2_,
                       &head_b2_, &dec_w_, &dec_b_, &patch_w1_, &patch_b1_, &patch_w2_,
                       &patch_b2_}) {
    ps.push_back(p);
  }
  return ps;
}

int64_t SeparatorModel::num_parameters() {
  int64_t total = 0;
  for (Parameter* p : parameters()) total += p->value.size();
  return total;
}

Var SeparatorModel::encode(Graph& g, const std::vector<double>& samples) {
  const int64_t t = static_cast<int64_t>(samples.size());
  if (t < cfg_.kernel) {
    throw ShapeError("encode: input has " + std::to_string(t) + " samples, need at least " +
                     std::to_string(cfg_.kernel));
  }
  Var x = g.constant(Tensor({1, t}, samples));
  return g.relu(g.conv1d(x, g.param(enc_w_), g.param(enc_b_), static_cast<int>(cfg_.stride)));
}

Tensor SeparatorModel::encode_repr(const std::vector<double>& samples) {
  Graph g;
  return g.value(encode(g, samples));
}

Var SeparatorModel::decode(Graph& g, Var h) {
  return g.conv1d_transpose(h, g.param(dec_w_), g.param(dec_b_), static_cast<int>(cfg_.stride));
}

Var SeparatorModel::project_patches(Graph& g, Var rows) {
  Var e = g.relu(g.affine(rows, g.param(patch_w1_), g.param(patch_b1_)));
  e = g.affine(e, g.param(patch_w2_), g.param(patch_b2_));
  return g.l2_normalize(e, 1, 1e-12);
}

Var SeparatorModel::run_path(Graph& g, Var x, PathUnit& u) {
  const auto& sh = g.value(x).shape();
  const int64_t b = sh[0];
  const int64_t t = sh[1];
  const int64_t n = sh[2];
  Var y;
  if (cfg_.block_kind == BlockKind::Recurrent) {
    const int64_t hidden = cfg_.hidden;
    Var xz = g.affine(x, g.param(u.wz), g.param(u.bz));
    Var xr = g.affine(x, g.param(u.wr), g.param(u.br));
    Var xh = g.affine(x, g.param(u.wh), g.param(u.bh));
    Var uz = g.param(u.uz);
    Var ur = g.param(u.ur);
    Var uh = g.param(u.uh);
    Var state = g.constant(Tensor::zeros({b, hidden}));
    std::vector<Var> outs;
    outs.reserve(static_cast<size_t>(t));
    for (int64_t step = 0; step < t; ++step) {
      Var az = g.reshape(g.slice(xz, 1, step, step + 1), {b, hidden});
      Var ar = g.reshape(g.slice(xr, 1, step, step + 1), {b, hidden});
      Var ah = g.reshape(g.slice(xh, 1, step, step + 1), {b, hidden});
      Var zg = g.sigmoid(g.add(az, g.matmul(state, uz)));
      Var rg = g.sigmoid(g.add(ar, g.matmul(state, ur)));
      Var cand = g.tanh(g.add(ah, g.matmul(g.mul(rg, state), uh)));
      state = g.add(state, g.mul(zg, g.sub(cand, state)));
      outs.push_back(g.reshape(state, {b, 1, hidden}));
    }
    Var seq = outs.size() == 1 ? outs[0] : g.concat(outs, 1);
    y = g.affine(seq, g.param(u.proj_w), g.param(u.proj_b));
  } else {
    Var flat = g.reshape(x, {b * t, n});
    Var q3 = g.reshape(g.matmul(flat, g.param(u.wq)), {b, t, n});
    Var k3 = g.reshape(g.matmul(flat, g.param(u.wk)), {b, t, n});
    Var v3 = g.reshape(g.matmul(flat, g.param(u.wv)), {b, t, n});
    Var attn = g.softmax_last(
        g.scale(g.matmul(q3, g.transpose(k3, 1, 2)), 1.0 / std::sqrt(static_cast<double>(n))));
    Var ctx = g.matmul(attn, v3);
    y = g.affine(ctx, g.param(u.wo), g.param(u.bo));
  }
  return g.layer_norm(g.add(x, y), g.param(u.norm_g), g.param(u.norm_b), kNormEps);
}

Var SeparatorModel::run_block(Graph& g, Var x, Block& blk) {
  x = run_path(g, x, blk.intra);            // within each chunk, over K
  Var xt = g.transpose(x, 0, 1);            // [K, S, N]
  xt = run_path(g, xt, blk.inter);          // across chunks, over S
  return g.transpose(xt, 0, 1);
}

std::vector<Var> SeparatorModel::masking_net(Graph& g, Var h_xn) {
  const auto& sh = g.value(h_xn).shape();
  if (sh.size() != 2 || sh[0] != cfg_.filters) {
    throw ShapeError("masking_net: expected [" + std::to_string(cfg_.filters) +
                     ", L] representation, got " + Tensor::shape_str(sh));
  }
  const int64_t l = sh[1];
  const int64_t n = cfg_.filters;
  const int64_t g_cnt = cfg_.num_sources();
  Var x = g.transpose(h_xn, 0, 1);  // frames as rows: [L, N]
  x = g.layer_norm(x, g.param(norm_g_), g.param(norm_b_), kNormEps);
  x = g.affine(x, g.param(in_w_), g.param(in_b_));
  Var c = chunk_rows(g, x, cfg_.chunk_size);
  for (auto& blk : blocks_) c = run_block(g, c, blk);
  c = g.prelu(c, g.param(prelu_));
  c = g.affine(c, g.param(widen_w_), g.param(widen_b_));  // [S, K, G*N]
  Var y = overlap_add_rows(g, c, l);                       // [L, G*N]
  std::vector<Var> masks;
  masks.reserve(static_cast<size_t>(g_cnt));
  for (int64_t s = 0; s < g_cnt; ++s) {
    Var hs = g.slice(y, 1, s * n, (s + 1) * n);
    Var m = g.relu(g.affine(hs, g.param(head_w1_), g.param(head_b1_)));
    m = g.relu(g.affine(m, g.param(head_w2_), g.param(head_b2_)));
    masks.push_back(g.transpose(m, 0, 1));  // back to [N, L]
  }
  return masks;
}

std::vector<Var> SeparatorModel::apply_masks(Graph& g, Var h_xn, const std::vector<Var>& masks) {
  if (static_cast<int64_t>(masks.size()) != cfg_.num_sources()) {
    throw ShapeError("apply_masks: expected " + std::to_string(cfg_.num_sources()) +
                     " masks, got " + std::to_string(masks.size()));
  }
  std::vector<Var> out;
  out.reserve(masks.size());
  for (Var m : masks) out.push_back(g.mul(m, h_xn));
  return out;
}

ForwardResult SeparatorModel::forward(Graph& g, const std::vector<double>& samples) {
  const int64_t t = static_cast<int64_t>(samples.size());
  ForwardResult r;
  r.h_xn = encode(g, samples);
  r.masks = masking_net(g, r.h_xn);
  r.masked = apply_masks(g, r.h_xn, r.masks);
  r.outputs.reserve(r.masked.size());
  for (Var hk : r.masked) {
    Var wav = decode(g, hk);  // [1, T']
    const int64_t t_out = g.value(wav).dim(1);
    wav = g.reshape(wav, {t_out});
    if (t_out > t) {
      wav = g.slice(wav, 0, 0, t);
    } else if (t_out < t) {
      wav = g.concat({wav, g.constant(Tensor::zeros({t - t_out}))}, 0);
    }
    r.outputs.push_back(wav);
  }
  return r;
}

SeparationResult SeparatorModel::separate(const AudioSignal& x) {
  Graph g;
  ForwardResult f = forward(g, x.samples);
  SeparationResult res;
  res.h_xn = g.value(f.h_xn);
  res.sources.reserve(f.outputs.size());
  res.h_k.reserve(f.masked.size());
  for (size_t i = 0; i < f.outputs.size(); ++i) {
    AudioSignal s;
    s.sample_rate = x.sample_rate;
    s.samples = g.value(f.outputs[i]).vec();
    res.sources.push_back(std::move(s));
    res.h_k.push_back(g.value(f.masked[i]));
  }
  return res;
}

}  // namespace noisesep
