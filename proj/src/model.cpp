#include "mtp/model.hpp"

#include "mtp/rng.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

namespace mtp {

namespace {

// Batch-mean accumulator keyed by (anchor, offset); offset 0 = NTP term.
class TermStats {
 public:
  void add(int anchor, int offset, double value) {
    auto& [sum, n] = stats_[{anchor, offset}];
    sum += value;
    ++n;
  }
  void fill(LossBreakdown& out) const {
    for (const auto& [key, sn] : stats_) {
      const double mean = sn.first / sn.second;
      if (key.second == 0)
        out.ntp_terms.emplace_back(key.first, mean);
      else
        out.mtp_terms.emplace_back(key.first, key.second, mean);
    }
  }

 private:
  std::map<std::pair<int, int>, std::pair<double, int>> stats_;
};

bool term_selected(const LossOptions& o, int anchor, int offset) {
  if (o.only_anchor < 0) return true;
  return anchor == o.only_anchor && offset == o.only_offset;
}

}  // namespace

void Batch::validate() const {
  if (batch_size < 1 || seq_len < 2) {
    throw std::invalid_argument("batch: need batch_size >= 1 and seq_len >= 2");
  }
  if (tokens.size() != static_cast<size_t>(batch_size) * seq_len) {
    throw std::invalid_argument("batch: token buffer size mismatch");
  }
  if (loss_mask.size() != static_cast<size_t>(seq_len)) {
    throw std::invalid_argument("batch: loss mask length != seq_len");
  }
}

Model::Model(const BackboneConfig& cfg, const HeadStrategy& strategy,
             uint64_t init_seed)
    : strategy_(strategy) {
  strategy_.validate();
  auto rng = make_rng(init_seed, SeedStream::kInit, 0);
  backbone_ = std::make_unique<Backbone>(cfg, reg_, rng);
  const int d = cfg.d_model;
  const double rs = 1.0 / std::sqrt(2.0 * cfg.n_layers);
  if (strategy_.uses_fetch()) {
    fetch_ = make_fetch(reg_, d, strategy_.depth, strategy_.gamma,
                        strategy_.gamma_learnable, rng);
  }
  if (strategy_.kind == StrategyKind::kMarginalMtp) {
    for (int i = 1; i <= strategy_.depth; ++i) {
      mtp_blocks_.push_back(make_block(reg_, "marginal.block" + std::to_string(i),
                                       d, cfg.mlp_factor, rs, rng));
    }
  }
  if (strategy_.kind == StrategyKind::kSequentialMtp) {
    for (int k = 1; k <= strategy_.depth; ++k) {
      seq_proj_w_.push_back(reg_.add("seq.proj" + std::to_string(k) + ".w",
                                     normal_init(2 * d, d, 0.02, rng), true));
      seq_proj_b_.push_back(reg_.add("seq.proj" + std::to_string(k) + ".b",
                                     Mat::Zero(1, d), false));
      mtp_blocks_.push_back(make_block(reg_, "seq.block" + std::to_string(k), d,
                                       cfg.mlp_factor, rs, rng));
    }
  }
}

LossGraph Model::compute_loss(const Batch& batch, const LossOptions& opts) {
  batch.validate();
  switch (strategy_.kind) {
    case StrategyKind::kJtp: return jtp_loss(batch, opts);
    case StrategyKind::kMarginalMtp: return marginal_loss(batch, opts);
    case StrategyKind::kSequentialMtp: return sequential_loss(batch, opts);
    case StrategyKind::kNtpOnly:
      return strategy_.uses_fetch() ? jtp_loss(batch, opts)
                                    : ntp_only_loss(batch, opts);
  }
  throw std::logic_error("unreachable");
}

LossGraph Model::jtp_loss(const Batch& batch, const LossOptions& opts) {
  const int B = batch.batch_size, T = batch.seq_len, D = strategy_.depth;
  const int W = D + 1;
  const WindowPlan plan = plan_windows(T, D, batch.loss_mask);
  Tensor h = backbone_->forward(batch.tokens, T);

  std::vector<int> anchors;
  for (int t = 1; t <= T - 1; ++t) {
    if (plan.ntp_valid[t - 1] || !plan.valid_offsets[t - 1].empty())
      anchors.push_back(t);
  }
  const int A = static_cast<int>(anchors.size());
  LossGraph out;
  out.hidden = h;
  out.breakdown.ntp_count = plan.ntp_count;
  out.breakdown.mtp_count = plan.mtp_count;
  if (A == 0) {
    out.loss = Tensor::scalar(0.0);
    return out;
  }

  std::vector<int> rep, wtok, wposid;
  rep.reserve(static_cast<size_t>(B) * A * W);
  wtok.reserve(rep.capacity());
  wposid.reserve(rep.capacity());
  for (int b = 0; b < B; ++b) {
    for (int t : anchors) {
      for (int j = 0; j < W; ++j) {
        rep.push_back(b * T + (t - 1));
        const int p = t + j - 1;
        // rows past the last usable token are never attended by a live
        // target; clamp their token to PAD
        wtok.push_back(p <= T - 1 ? batch.tokens[static_cast<size_t>(b) * T + p] : 0);
        wposid.push_back(j);
      }
    }
  }

  Tensor h_rep = gather_rows(h, rep);
  Tensor x = scale_by(h_rep, fetch_.gamma) +
             gather_rows(backbone_->token_embedding(), wtok) +
             gather_rows(fetch_.wpos, wposid);
  Tensor mixed = causal_attention(matmul(x, fetch_.wq), matmul(x, fetch_.wk),
                                  matmul(x, fetch_.wv),
                                  backbone_->config().n_heads, W);
  Tensor attn_out = matmul(mixed, fetch_.wo);

  std::vector<double> skip_w(rep.size());
  for (size_t r = 0; r < rep.size(); ++r) {
    const int j = static_cast<int>(r % W);
    skip_w[r] = (j >= 1 || strategy_.row0_skip) ? 1.0 : 0.0;
  }
  Tensor fetched = add_rows_weighted(attn_out, h_rep, skip_w);
  Tensor logits = backbone_->head_logits(fetched);

  std::vector<int> targets(rep.size(), 0);
  std::vector<double> weights(rep.size(), 0.0);
  std::vector<double> w_ntp(rep.size(), 0.0), w_mtp(rep.size(), 0.0);
  for (int b = 0; b < B; ++b) {
    for (int ai = 0; ai < A; ++ai) {
      const int t = anchors[ai];
      const size_t base = (static_cast<size_t>(b) * A + ai) * W;
      targets[base] = batch.tokens[static_cast<size_t>(b) * T + t];
      if (plan.ntp_valid[t - 1] && term_selected(opts, t, 0))
        w_ntp[base] = 1.0 / (static_cast<double>(B) * plan.ntp_count);
      const auto& offs = plan.valid_offsets[t - 1];
      for (int i : offs) {
        const size_t r = base + i;
        targets[r] = batch.tokens[static_cast<size_t>(b) * T + t + i];
        if (term_selected(opts, t, i))
          w_mtp[r] = 1.0 / (static_cast<double>(B) * plan.mtp_anchor_count *
                            static_cast<double>(offs.size()));
      }
    }
  }
  for (size_t r = 0; r < rep.size(); ++r)
    weights[r] = w_ntp[r] + strategy_.lambda * w_mtp[r];

  if (opts.only_anchor >= 0) {
    // probe mode: batch-mean of the single selected term
    for (size_t r = 0; r < rep.size(); ++r)
      weights[r] = (w_ntp[r] != 0.0 || w_mtp[r] != 0.0) ? 1.0 / B : 0.0;
  }

  RowLosses ce = cross_entropy_rows(logits, targets, weights);

  TermStats stats;
  double ntp_mean = 0.0, mtp_mean = 0.0;
  for (int b = 0; b < B; ++b) {
    for (int ai = 0; ai < A; ++ai) {
      const int t = anchors[ai];
      const size_t base = (static_cast<size_t>(b) * A + ai) * W;
      if (plan.ntp_valid[t - 1]) {
        stats.add(t, 0, ce.per_row[base]);
        ntp_mean += ce.per_row[base] / (static_cast<double>(B) * plan.ntp_count);
      }
      const auto& offs = plan.valid_offsets[t - 1];
      for (int i : offs) {
        stats.add(t, i, ce.per_row[base + i]);
        mtp_mean += ce.per_row[base + i] /
                    (static_cast<double>(B) * plan.mtp_anchor_count *
                     static_cast<double>(offs.size()));
      }
    }
  }
  stats.fill(out.breakdown);
  out.breakdown.ntp_mean = ntp_mean;
  out.breakdown.mtp_mean = mtp_mean;
  out.breakdown.combined = (opts.only_anchor < 0)
                               ? ce.total.item()
                               : ntp_mean + strategy_.lambda * mtp_mean;
  out.loss = ce.total;
  return out;
}

LossGraph Model::ntp_only_loss(const Batch& batch, const LossOptions& opts) {
  const int B = batch.batch_size, T = batch.seq_len;
  const WindowPlan plan = plan_windows(T, 0, batch.loss_mask);
  Tensor h = backbone_->forward(batch.tokens, T);
  LossGraph out;
  out.hidden = h;
  out.breakdown.ntp_count = plan.ntp_count;
  if (plan.ntp_count == 0) {
    out.loss = Tensor::scalar(0.0);
    return out;
  }
  std::vector<int> rows, targets;
  std::vector<int> anchor_of;
  for (int b = 0; b < B; ++b) {
    for (int t = 1; t <= T - 1; ++t) {
      if (!plan.ntp_valid[t - 1]) continue;
      rows.push_back(b * T + (t - 1));
      targets.push_back(batch.tokens[static_cast<size_t>(b) * T + t]);
      anchor_of.push_back(t);
    }
  }
  Tensor logits = backbone_->head_logits(gather_rows(h, rows));
  std::vector<double> weights(rows.size());
  for (size_t r = 0; r < rows.size(); ++r) {
    weights[r] = term_selected(opts, anchor_of[r], 0)
                     ? 1.0 / (static_cast<double>(B) * plan.ntp_count)
                     : 0.0;
    if (opts.only_anchor >= 0 && weights[r] != 0.0) weights[r] = 1.0 / B;
  }
  RowLosses ce = cross_entropy_rows(logits, targets, weights);
  TermStats stats;
  double ntp_mean = 0.0;
  for (size_t r = 0; r < rows.size(); ++r) {
    stats.add(anchor_of[r], 0, ce.per_row[r]);
    ntp_mean += ce.per_row[r] / (static_cast<double>(B) * plan.ntp_count);
  }
  stats.fill(out.breakdown);
  out.breakdown.ntp_mean = ntp_mean;
  out.breakdown.combined = (opts.only_anchor < 0) ? ce.total.item() : ntp_mean;
  out.loss = ce.total;
  return out;
}

LossGraph Model::marginal_loss(const Batch& batch, const LossOptions& opts) {
  const int B = batch.batch_size, T = batch.seq_len, D = strategy_.depth;
  const int n_heads = backbone_->config().n_heads;
  const WindowPlan plan = plan_windows(T, D, batch.loss_mask);
  Tensor h = backbone_->forward(batch.tokens, T);
  LossGraph out;
  out.hidden = h;
  out.breakdown.ntp_count = plan.ntp_count;
  out.breakdown.mtp_count = plan.mtp_count;

  Tensor loss = Tensor::scalar(0.0);
  TermStats stats;
  double ntp_mean = 0.0, mtp_mean = 0.0;

  if (plan.ntp_count > 0) {
    std::vector<int> rows, targets, anchor_of;
    for (int b = 0; b < B; ++b) {
      for (int t = 1; t <= T - 1; ++t) {
        if (!plan.ntp_valid[t - 1]) continue;
        rows.push_back(b * T + (t - 1));
        targets.push_back(batch.tokens[static_cast<size_t>(b) * T + t]);
        anchor_of.push_back(t);
      }
    }
    Tensor logits = backbone_->head_logits(gather_rows(h, rows));
    std::vector<double> weights(rows.size());
    for (size_t r = 0; r < rows.size(); ++r) {
      const double w = 1.0 / (static_cast<double>(B) * plan.ntp_count);
      weights[r] = term_selected(opts, anchor_of[r], 0)
                       ? (opts.only_anchor >= 0 ? 1.0 / B : w)
                       : 0.0;
    }
    RowLosses ce = cross_entropy_rows(logits, targets, weights);
    for (size_t r = 0; r < rows.size(); ++r) {
      stats.add(anchor_of[r], 0, ce.per_row[r]);
      ntp_mean += ce.per_row[r] / (static_cast<double>(B) * plan.ntp_count);
    }
    loss = loss + ce.total;
  }

  for (int i = 1; i <= D; ++i) {
    std::vector<int> anchors_i;
    for (int t = 1; t <= T - 1; ++t) {
      for (int o : plan.valid_offsets[t - 1])
        if (o == i) anchors_i.push_back(t);
    }
    if (anchors_i.empty()) continue;
    Tensor hb = block_apply(mtp_blocks_[i - 1], h, n_heads, T);
    std::vector<int> rows, targets, anchor_of;
    for (int b = 0; b < B; ++b) {
      for (int t : anchors_i) {
        rows.push_back(b * T + (t - 1));
        targets.push_back(batch.tokens[static_cast<size_t>(b) * T + t + i]);
        anchor_of.push_back(t);
      }
    }
    Tensor logits = backbone_->head_logits(gather_rows(hb, rows));
    std::vector<double> weights(rows.size());
    for (size_t r = 0; r < rows.size(); ++r) {
      const int t = anchor_of[r];
      const double w =
          1.0 / (static_cast<double>(B) * plan.mtp_anchor_count *
                 static_cast<double>(plan.valid_offsets[t - 1].size()));
      weights[r] = term_selected(opts, t, i)
                       ? (opts.only_anchor >= 0 ? 1.0 / B : strategy_.lambda * w)
                       : 0.0;
    }
    RowLosses ce = cross_entropy_rows(logits, targets, weights);
    for (size_t r = 0; r < rows.size(); ++r) {
      const int t = anchor_of[r];
      stats.add(t, i, ce.per_row[r]);
      mtp_mean += ce.per_row[r] /
                  (static_cast<double>(B) * plan.mtp_anchor_count *
                   static_cast<double>(plan.valid_offsets[t - 1].size()));
    }
    loss = loss + ce.total;
  }

  stats.fill(out.breakdown);
  out.breakdown.ntp_mean = ntp_mean;
  out.breakdown.mtp_mean = mtp_mean;
  out.breakdown.combined = (opts.only_anchor < 0)
                               ? loss.item()
                               : ntp_mean + strategy_.lambda * mtp_mean;
  out.loss = loss;
  return out;
}

LossGraph Model::sequential_loss(const Batch& batch, const LossOptions& opts) {
  const int B = batch.batch_size, T = batch.seq_len, D = strategy_.depth;
  const int n_heads = backbone_->config().n_heads;
  const WindowPlan plan = plan_windows(T, D, batch.loss_mask);
  Tensor h = backbone_->forward(batch.tokens, T);
  LossGraph out;
  out.hidden = h;
  out.breakdown.ntp_count = plan.ntp_count;
  out.breakdown.mtp_count = plan.mtp_count;

  Tensor loss = Tensor::scalar(0.0);
  TermStats stats;
  double ntp_mean = 0.0, mtp_mean = 0.0;

  if (plan.ntp_count > 0) {
    std::vector<int> rows, targets, anchor_of;
    for (int b = 0; b < B; ++b) {
      for (int t = 1; t <= T - 1; ++t) {
        if (!plan.ntp_valid[t - 1]) continue;
        rows.push_back(b * T + (t - 1));
        targets.push_back(batch.tokens[static_cast<size_t>(b) * T + t]);
        anchor_of.push_back(t);
      }
    }
    Tensor logits = backbone_->head_logits(gather_rows(h, rows));
    std::vector<double> weights(rows.size());
    for (size_t r = 0; r < rows.size(); ++r) {
      const double w = 1.0 / (static_cast<double>(B) * plan.ntp_count);
      weights[r] = term_selected(opts, anchor_of[r], 0)
                       ? (opts.only_anchor >= 0 ? 1.0 / B : w)
                       : 0.0;
    }
    RowLosses ce = cross_entropy_rows(logits, targets, weights);
    for (size_t r = 0; r < rows.size(); ++r) {
      stats.add(anchor_of[r], 0, ce.per_row[r]);
      ntp_mean += ce.per_row[r] / (static_cast<double>(B) * plan.ntp_count);
    }
    loss = loss + ce.total;
  }

  // depth-k states: h^k_i = Block_k(proj([h^{k-1}_i ; Emb(x_{i+k})])) over
  // the shortened sequence i = 0..T-k-1; term at depth k, position i
  // predicts x_{i+k+1} (anchor t = i+1, offset k)
  Tensor prev = h;
  int prev_len = T;
  for (int k = 1; k <= D && k <= T - 1; ++k) {
    const int tk = T - k;
    std::vector<int> prev_rows, emb_tok;
    prev_rows.reserve(static_cast<size_t>(B) * tk);
    emb_tok.reserve(prev_rows.capacity());
    for (int b = 0; b < B; ++b) {
      for (int i = 0; i < tk; ++i) {
        prev_rows.push_back(b * prev_len + i);
        emb_tok.push_back(batch.tokens[static_cast<size_t>(b) * T + i + k]);
      }
    }
    Tensor cat = concat_cols(gather_rows(prev, prev_rows),
                             gather_rows(backbone_->token_embedding(), emb_tok));
    Tensor proj = add_row_broadcast(matmul(cat, seq_proj_w_[k - 1]),
                                    seq_proj_b_[k - 1]);
    Tensor hk = block_apply(mtp_blocks_[k - 1], proj, n_heads, tk);

    std::vector<int> anchors_k;
    for (int t = 1; t <= T - 1; ++t) {
      for (int o : plan.valid_offsets[t - 1])
        if (o == k) anchors_k.push_back(t);
    }
    if (!anchors_k.empty()) {
      std::vector<int> rows, targets, anchor_of;
      for (int b = 0; b < B; ++b) {
        for (int t : anchors_k) {
          rows.push_back(b * tk + (t - 1));  // position i = t-1
          targets.push_back(batch.tokens[static_cast<size_t>(b) * T + t + k]);
          anchor_of.push_back(t);
        }
      }
      Tensor logits = backbone_->head_logits(gather_rows(hk, rows));
      std::vector<double> weights(rows.size());
      for (size_t r = 0; r < rows.size(); ++r) {
        const int t = anchor_of[r];
        const double w =
            1.0 / (static_cast<double>(B) * plan.mtp_anchor_count *
                   static_cast<double>(plan.valid_offsets[t - 1].size()));
        weights[r] = term_selected(opts, t, k)
                         ? (opts.only_anchor >= 0 ? 1.0 / B : strategy_.lambda * w)
                         : 0.0;
      }
      RowLosses ce = cross_entropy_rows(logits, targets, weights);
      for (size_t r = 0; r < rows.size(); ++r) {
        const int t = anchor_of[r];
        stats.add(t, k, ce.per_row[r]);
        mtp_mean += ce.per_row[r] /
                    (static_cast<double>(B) * plan.mtp_anchor_count *
                     static_cast<double>(plan.valid_offsets[t - 1].size()));
      }
      loss = loss + ce.total;
    }
    prev = hk;
    prev_len = tk;
  }

  stats.fill(out.breakdown);
  out.breakdown.ntp_mean = ntp_mean;
  out.breakdown.mtp_mean = mtp_mean;
  out.breakdown.combined = (opts.only_anchor < 0)
                               ? loss.item()
                               : ntp_mean + strategy_.lambda * mtp_mean;
  out.loss = loss;
  return out;
}

std::vector<double> Model::next_token_logits(const std::vector<int>& tokens) {
  if (tokens.empty()) throw std::invalid_argument("next_token_logits: empty prompt");
  const int T = static_cast<int>(tokens.size());
  Tensor h = backbone_->forward(tokens, T);
  Tensor logits;
  if (strategy_.uses_fetch()) {
    std::vector<int> rep{T - 1}, wtok{tokens.back()}, wposid{0};
    Tensor h_last = gather_rows(h, rep);
    Tensor x = scale_by(h_last, fetch_.gamma) +
               gather_rows(backbone_->token_embedding(), wtok) +
               gather_rows(fetch_.wpos, wposid);
    Tensor mixed = causal_attention(matmul(x, fetch_.wq), matmul(x, fetch_.wk),
                                    matmul(x, fetch_.wv),
                                    backbone_->config().n_heads, 1);
    Tensor out = matmul(mixed, fetch_.wo);
    if (strategy_.row0_skip) out = add_rows_weighted(out, h_last, {1.0});
    logits = backbone_->head_logits(out);
  } else {
    logits = backbone_->head_logits(gather_rows(h, {T - 1}));
  }
  const Mat& v = logits.value();
  return std::vector<double>(v.data(), v.data() + v.cols());
}

}  // namespace mtp
