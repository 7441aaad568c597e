#pragma once

#include "mtp/params.hpp"
#include "mtp/tensor.hpp"

#include <random>
#include <string>
#include <vector>

namespace mtp {

struct BackboneConfig {
  int n_layers = 2;
  int d_model = 128;
  int n_heads = 4;
  int mlp_factor = 4;
  int vocab_size = 56;
  int max_seq_len = 64;
  bool tie_embeddings = false;

  void validate() const;
};

/// One pre-norm GPT block: LN -> causal MHA -> residual; LN -> MLP -> residual.
struct BlockParams {
  Tensor ln1_g, ln1_b;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_g, ln2_b;
  Tensor w_fc, b_fc, w_proj, b_proj;
};

BlockParams make_block(ParamRegistry& reg, const std::string& prefix, int d_model,
                       int mlp_factor, double residual_scale, std::mt19937_64& rng);

/// x is (n_groups*group_size) x d_model; groups are independent sequences.
Tensor block_apply(const BlockParams& bp, const Tensor& x, int n_heads,
                   Index group_size);

Mat normal_init(Index rows, Index cols, double std, std::mt19937_64& rng);

/// GPT-style causal decoder. Hidden states come out after the final layer
/// norm; logits via the (untied by default) output head.
class Backbone {
 public:
  Backbone(const BackboneConfig& cfg, ParamRegistry& reg, std::mt19937_64& rng);

  /// Token + learned absolute positional embedding for flattened batch
  /// tokens (sample-major, each sequence of length seq_len).
  Tensor embed(const std::vector<int>& flat_tokens, Index seq_len) const;

  /// embed -> blocks -> final LN. Returns (B*T) x d_model.
  Tensor forward(const std::vector<int>& flat_tokens, Index seq_len) const;

  /// x * W_head + b_head.
  Tensor head_logits(const Tensor& x) const;

  const BackboneConfig& config() const { return cfg_; }
  const Tensor& token_embedding() const { return tok_emb_; }

 private:
  BackboneConfig cfg_;
  Tensor tok_emb_;  // V x d
  Tensor pos_emb_;  // max_seq_len x d
  std::vector<BlockParams> blocks_;
  Tensor lnf_g_, lnf_b_;
  Tensor head_w_;  // d x V
  Tensor head_b_;  // 1 x V
};

}  // namespace mtp
