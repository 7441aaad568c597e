#include "mtp/backbone.hpp"

#include <cmath>
#include <stdexcept>

namespace mtp {

void BackboneConfig::validate() const {
  if (n_layers < 1 || d_model < 1 || n_heads < 1 || mlp_factor < 1 ||
      vocab_size < 1 || max_seq_len < 1) {
    throw std::invalid_argument("backbone config: all fields must be >= 1");
  }
  if (d_model % n_heads != 0) {
    throw std::invalid_argument("backbone config: d_model " +
                                std::to_string(d_model) +
                                " not divisible by n_heads " +
                                std::to_string(n_heads));
  }
}

Mat normal_init(Index rows, Index cols, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std);
  Mat m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

BlockParams make_block(ParamRegistry& reg, const std::string& prefix, int d,
                       int mlp_factor, double residual_scale,
                       std::mt19937_64& rng) {
  const int dm = d * mlp_factor;
  BlockParams bp;
  bp.ln1_g = reg.add(prefix + ".ln1.g", Mat::Ones(1, d), false);
  bp.ln1_b = reg.add(prefix + ".ln1.b", Mat::Zero(1, d), false);
  bp.wq = reg.add(prefix + ".attn.wq", normal_init(d, d, 0.02, rng), true);
  bp.bq = reg.add(prefix + ".attn.bq", Mat::Zero(1, d), false);
  bp.wk = reg.add(prefix + ".attn.wk", normal_init(d, d, 0.02, rng), true);
  bp.bk = reg.add(prefix + ".attn.bk", Mat::Zero(1, d), false);
  bp.wv = reg.add(prefix + ".attn.wv", normal_init(d, d, 0.02, rng), true);
  bp.bv = reg.add(prefix + ".attn.bv", Mat::Zero(1, d), false);
  bp.wo = reg.add(prefix + ".attn.wo",
                  normal_init(d, d, 0.02 * residual_scale, rng), true);
  bp.bo = reg.add(prefix + ".attn.bo", Mat::Zero(1, d), false);
  bp.ln2_g = reg.add(prefix + ".ln2.g", Mat::Ones(1, d), false);
  bp.ln2_b = reg.add(prefix + ".ln2.b", Mat::Zero(1, d), false);
  bp.w_fc = reg.add(prefix + ".mlp.w_fc", normal_init(d, dm, 0.02, rng), true);
  bp.b_fc = reg.add(prefix + ".mlp.b_fc", Mat::Zero(1, dm), false);
  bp.w_proj = reg.add(prefix + ".mlp.w_proj",
                      normal_init(dm, d, 0.02 * residual_scale, rng), true);
  bp.b_proj = reg.add(prefix + ".mlp.b_proj", Mat::Zero(1, d), false);
  return bp;
}

Tensor block_apply(const BlockParams& bp, const Tensor& x, int n_heads,
                   Index group_size) {
  Tensor a = layer_norm(x, bp.ln1_g, bp.ln1_b);
  Tensor q = add_row_broadcast(matmul(a, bp.wq), bp.bq);
  Tensor k = add_row_broadcast(matmul(a, bp.wk), bp.bk);
  Tensor v = add_row_broadcast(matmul(a, bp.wv), bp.bv);
  Tensor mixed = causal_attention(q, k, v, n_heads, group_size);
  Tensor h = x + add_row_broadcast(matmul(mixed, bp.wo), bp.bo);
  Tensor m = layer_norm(h, bp.ln2_g, bp.ln2_b);
  m = gelu(add_row_broadcast(matmul(m, bp.w_fc), bp.b_fc));
  m = add_row_broadcast(matmul(m, bp.w_proj), bp.b_proj);
  return h + m;
}

Backbone::Backbone(const BackboneConfig& cfg, ParamRegistry& reg,
                   std::mt19937_64& rng)
    : cfg_(cfg) {
  cfg_.validate();
  const int d = cfg_.d_model;
  tok_emb_ = reg.add("backbone.tok_emb",
                     normal_init(cfg_.vocab_size, d, 0.02, rng), false);
  pos_emb_ = reg.add("backbone.pos_emb",
                     normal_init(cfg_.max_seq_len, d, 0.02, rng), false);
  const double rs = 1.0 / std::sqrt(2.0 * cfg_.n_layers);
  for (int l = 0; l < cfg_.n_layers; ++l) {
    blocks_.push_back(make_block(reg, "backbone.block" + std::to_string(l), d,
                                 cfg_.mlp_factor, rs, rng));
  }
  lnf_g_ = reg.add("backbone.lnf.g", Mat::Ones(1, d), false);
  lnf_b_ = reg.add("backbone.lnf.b", Mat::Zero(1, d), false);
  if (!cfg_.tie_embeddings) {
    head_w_ = reg.add("head.w", normal_init(d, cfg_.vocab_size, 0.02, rng), true);
  }
  head_b_ = reg.add("head.b", Mat::Zero(1, cfg_.vocab_size), false);
}

Tensor Backbone::embed(const std::vector<int>& flat_tokens, Index seq_len) const {
  if (seq_len > cfg_.max_seq_len) {
    throw std::invalid_argument("embed: sequence length " +
                                std::to_string(seq_len) + " exceeds max " +
                                std::to_string(cfg_.max_seq_len));
  }
  if (flat_tokens.empty() || flat_tokens.size() % static_cast<size_t>(seq_len) != 0) {
    throw std::invalid_argument("embed: token count not a multiple of seq_len");
  }
  for (int t : flat_tokens) {
    if (t < 0 || t >= cfg_.vocab_size) {
      throw std::invalid_argument("embed: token id " + std::to_string(t) +
                                  " outside vocab of size " +
                                  std::to_string(cfg_.vocab_size));
    }
  }
  std::vector<int> pos(flat_tokens.size());
  for (size_t i = 0; i < pos.size(); ++i)
    pos[i] = static_cast<int>(i % static_cast<size_t>(seq_len));
  return gather_rows(tok_emb_, flat_tokens) + gather_rows(pos_emb_, pos);
}

Tensor Backbone::forward(const std::vector<int>& flat_tokens, Index seq_len) const {
  Tensor x = embed(flat_tokens, seq_len);
  for (const auto& bp : blocks_) x = block_apply(bp, x, cfg_.n_heads, seq_len);
  return layer_norm(x, lnf_g_, lnf_b_);
}

Tensor Backbone::head_logits(const Tensor& x) const {
  Tensor l = cfg_.tie_embeddings ? matmul_bt(x, tok_emb_) : matmul(x, head_w_);
  return add_row_broadcast(l, head_b_);
}

}  // namespace mtp
