#pragma once

#include "mtp/backbone.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace mtp {

/// Exact multiply-accumulate accounting for one forward pass (2 flops per
/// MAC; softmax and elementwise costs ignored). The backward pass is costed
/// as 2x forward where a total is reported.
struct CostReport {
  int seq_len = 0;   // T
  int n_layers = 0;  // L
  int depth = 0;     // D
  int d_model = 0;
  int64_t flops_backbone = 0;
  int64_t flops_fetch = 0;
  int64_t flops_head = 0;
  int64_t gradient_terms_ntp = 0;
  int64_t gradient_terms_mtp = 0;

  int64_t forward_flops() const {
    return flops_backbone + flops_fetch + flops_head;
  }
  int64_t total_flops() const { return 3 * forward_flops(); }  // fwd + 2x bwd
  int64_t gradient_terms() const {
    return gradient_terms_ntp + gradient_terms_mtp;
  }
  double flops_per_gradient() const {
    const int64_t g = gradient_terms();
    return g ? static_cast<double>(total_flops()) / static_cast<double>(g) : 0.0;
  }
};

/// Exact count of valid loss terms under the jtp_loss windowing rule:
/// NTP at t iff mask[t]; MTP (t, i) iff t+i <= T-1 and mask[t+i].
std::pair<int64_t, int64_t> gradient_tally(int seq_len, int depth,
                                           const std::vector<uint8_t>& mask);
std::pair<int64_t, int64_t> gradient_tally(int seq_len, int depth);  // no mask

/// Analytic flop model: per layer 8*T*d^2 (QKVO) + 4*T^2*d (scores+mix) +
/// 4*mlp_factor*T*d^2 (MLP); fetch per anchor 8*(D+1)*d^2 + 4*(D+1)^2*d over
/// T anchors; head 2*T*(D+1)*d*V.
CostReport flop_estimate(const BackboneConfig& config, int seq_len, int depth);

struct RegimePoint {
  int seq_len = 0;
  int depth = 0;
  double flops_per_gradient = 0;
};

/// Evaluates flops_per_gradient over a (T, D) grid; the per-T argmin in D
/// locates the efficient prediction-depth regime.
std::vector<RegimePoint> regime_sweep(const BackboneConfig& config,
                                      const std::vector<int>& seq_lens,
                                      const std::vector<int>& depths);

}  // namespace mtp
