// Copyright 2026 The noisesep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <string>
#include <vector>

#include "noisesep/autodiff.hpp"
#include "noisesep/signals.hpp"

namespace noisesep {

enum class BlockKind { Recurrent, Attention };

BlockKind parse_block_kind(const std::string& s);
std::string block_kind_name(BlockKind k);

struct SeparatorConfig {
  int64_t filters = 64;       // N, encoder output channels
  int64_t kernel = 16;        // encoder kernel size
  int64_t stride = 8;         // encoder hop
  int num_speakers = 2;       // C, human speakers
  bool noise_speaker = true;  // adds one extra predicted source (G = C+1)
  int64_t chunk_size = 50;    // K, even
  int64_t blocks = 2;         // processing-block count
  BlockKind block_kind = BlockKind::Recurrent;
  int64_t hidden = 64;        // per-path sequence-model width
  int64_t embed_dim = 256;    // Q, patch projection width (used by contrastive loss)

  int64_t num_sources() const { return num_speakers + (noise_speaker ? 1 : 0); }
  void validate() const;
};

// 50%-overlap chunking of an N x L representation (plain-tensor form).
struct ChunkedRepr {
  Tensor values;  // N x K x S
  int64_t original_l = 0;
  int64_t pad_amount = 0;
};

struct ChunkPlan {
  int64_t hop = 0;
  int64_t l_pad = 0;
  int64_t num_chunks = 0;  // S
  int64_t pad = 0;
};

ChunkPlan chunk_plan(int64_t l, int64_t k);
ChunkedRepr chunk(const Tensor& h, int64_t k);
Tensor overlap_add(const ChunkedRepr& c);

// Graph-recorded variants used inside the masking network; these work in
// frames-as-rows orientation. chunk_rows: [L, N] -> [S, K, N];
// overlap_add_rows averages overlaps and drops padding: -> [original_l, N].
Var chunk_rows(Graph& g, Var x, int64_t k);
Var overlap_add_rows(Graph& g, Var c, int64_t original_l);

struct ForwardResult {
  Var h_xn;                  // N x L mixture representation
  std::vector<Var> masks;    // G masks, N x L, nonnegative
  std::vector<Var> masked;   // h_k = m_k * h_xn
  std::vector<Var> outputs;  // [T] waveform per source, trimmed to input length
};

struct SeparationResult {
  std::vector<AudioSignal> sources;  // C speakers, then noise last when enabled
  Tensor h_xn;
  std::vector<Tensor> h_k;
};

class SeparatorModel {
 public:
  SeparatorModel(SeparatorConfig cfg, uint64_t seed);

  const SeparatorConfig& config() const { return cfg_; }
  // Stable order; checkpoint records and optimizer state index into it.
  std::vector<Parameter*> parameters();
  int64_t num_parameters();

  Var encode(Graph& g, const std::vector<double>& samples);
  // encode() in a throwaway graph; yields a plain tensor with no gradient ties.
  Tensor encode_repr(const std::vector<double>& samples);
  Var decode(Graph& g, Var h);
  std::vector<Var> masking_net(Graph& g, Var h_xn);
  std::vector<Var> apply_masks(Graph& g, Var h_xn, const std::vector<Var>& masks);
  ForwardResult forward(Graph& g, const std::vector<double>& samples);

  SeparationResult separate(const AudioSignal& x);

  // Shared patch projection (N -> Q -> Q with inner ReLU, then row-wise L2
  // normalization), used by the contrastive loss. rows: [M, N] -> [M, Q].
  Var project_patches(Graph& g, Var rows);
  Parameter& patch_w1() { return patch_w1_; }
  Parameter& patch_b1() { return patch_b1_; }
  Parameter& patch_w2() { return patch_w2_; }
  Parameter& patch_b2() { return patch_b2_; }

 private:
  struct PathUnit {
    // recurrent kind
    Parameter wz, wr, wh;  // input projections [N, H]
    Parameter uz, ur, uh;  // recurrent projections [H, H]
    Parameter bz, br, bh;  // gate biases [H]
    Parameter proj_w, proj_b;  // back to N
    // attention kind
    Parameter wq, wk, wv, wo, bo;
    // post-residual norm
    Parameter norm_g, norm_b;
  };
  struct Block {
    PathUnit intra, inter;
  };

  Var run_path(Graph& g, Var x, PathUnit& unit);  // x: [B, T, N] over axis 1
  Var run_block(Graph& g, Var x, Block& blk);     // x: [S, K, N]

  SeparatorConfig cfg_;
  Parameter enc_w_, enc_b_;
  Parameter norm_g_, norm_b_;
  Parameter in_w_, in_b_;
  std::vector<Block> blocks_;
  Parameter prelu_;
  Parameter widen_w_, widen_b_;
  Parameter head_w1_, head_b1_, head_w2_, head_b2_;
  Parameter dec_w_, dec_b_;
  Parameter patch_w1_, patch_b1_, patch_w2_, patch_b2_;
};

}  // namespace noisesep
