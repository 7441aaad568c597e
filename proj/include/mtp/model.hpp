#pragma once

#include "mtp/backbone.hpp"
#include "mtp/heads.hpp"
#include "mtp/params.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

namespace mtp {

/// A batch of equal-length token sequences sharing one loss mask.
struct Batch {
  int batch_size = 0;
  int seq_len = 0;
  std::vector<int> tokens;        // sample-major, batch_size * seq_len
  std::vector<uint8_t> loss_mask; // per position, length seq_len

  void validate() const;
};

/// Restrict the loss to a single term; used for per-term gradient probes.
struct LossOptions {
  int only_anchor = -1;  // -1: all terms
  int only_offset = -1;  // with only_anchor: 0 = NTP term, i >= 1 = MTP offset
};

struct LossGraph {
  Tensor loss;    // scalar; combined = ntp_mean + lambda * mtp_mean
  Tensor hidden;  // backbone hidden states, (B*T) x d, for gradient probes
  LossBreakdown breakdown;
};

/// Backbone plus the selected prediction-head strategy and its parameters.
class Model {
 public:
  Model(const BackboneConfig& cfg, const HeadStrategy& strategy, uint64_t init_seed);

  LossGraph compute_loss(const Batch& batch, const LossOptions& opts = {});

  /// Logits for the next token after `tokens`, through the strategy's trained
  /// next-token path (fetch row 0 for JTP, plain head otherwise).
  std::vector<double> next_token_logits(const std::vector<int>& tokens);

  int64_t count_parameters() const { return reg_.count_trainable(); }

  ParamRegistry& params() { return reg_; }
  const ParamRegistry& params() const { return reg_; }
  const BackboneConfig& config() const { return backbone_->config(); }
  const HeadStrategy& strategy() const { return strategy_; }
  const Backbone& backbone() const { return *backbone_; }

 private:
  Tensor fetch_logits(const Tensor& hidden, const Batch& batch,
                      const std::vector<int>& anchors,
                      std::vector<int>* anchor_of_row) const;
  LossGraph jtp_loss(const Batch& batch, const LossOptions& opts);
  LossGraph marginal_loss(const Batch& batch, const LossOptions& opts);
  LossGraph sequential_loss(const Batch& batch, const LossOptions& opts);
  LossGraph ntp_only_loss(const Batch& batch, const LossOptions& opts);

  HeadStrategy strategy_;
  ParamRegistry reg_;
  std::unique_ptr<Backbone> backbone_;
  FetchParams fetch_;                  // when strategy_.uses_fetch()
  std::vector<BlockParams> mtp_blocks_;  // marginal: one per offset; sequential: per depth
  std::vector<Tensor> seq_proj_w_;     // sequential: 2d -> d combine projections
  std::vector<Tensor> seq_proj_b_;
};

}  // namespace mtp
