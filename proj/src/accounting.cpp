#include "mtp/accounting.hpp"

#include <stdexcept>

namespace mtp {

std::pair<int64_t, int64_t> gradient_tally(int seq_len, int depth,
                                           const std::vector<uint8_t>& mask) {
  if (seq_len < 2 || depth < 0) {
    throw std::invalid_argument("gradient_tally: need T >= 2 and D >= 0");
  }
  if (static_cast<int>(mask.size()) != seq_len) {
    throw std::invalid_argument("gradient_tally: mask length != T");
  }
  int64_t ntp = 0, mtp = 0;
  for (int t = 1; t <= seq_len - 1; ++t) {
    if (mask[t]) ++ntp;
    for (int i = 1; i <= depth; ++i) {
      if (t + i <= seq_len - 1 && mask[t + i]) ++mtp;
    }
  }
  return {ntp, mtp};
}

std::pair<int64_t, int64_t> gradient_tally(int seq_len, int depth) {
  return gradient_tally(seq_len, depth,
                        std::vector<uint8_t>(static_cast<size_t>(seq_len), 1));
}

CostReport flop_estimate(const BackboneConfig& config, int seq_len, int depth) {
  config.validate();
  if (seq_len < 1 || depth < 0) {
    throw std::invalid_argument("flop_estimate: need T >= 1 and D >= 0");
  }
  const int64_t T = seq_len, L = config.n_layers, D = depth;
  const int64_t d = config.d_model, V = config.vocab_size;
  const int64_t W = D + 1;
  CostReport r;
  r.seq_len = seq_len;
  r.n_layers = config.n_layers;
  r.depth = depth;
  r.d_model = config.d_model;
  r.flops_backbone =
      L * (8 * T * d * d + 4 * T * T * d + 4 * config.mlp_factor * T * d * d);
  r.flops_fetch = T * (8 * W * d * d + 4 * W * W * d);
  r.flops_head = 2 * T * W * d * V;
  if (seq_len >= 2) {
    auto [ntp, mtp] = gradient_tally(seq_len, depth);
    r.gradient_terms_ntp = ntp;
    r.gradient_terms_mtp = mtp;
  }
  return r;
}

std::vector<RegimePoint> regime_sweep(const BackboneConfig& config,
                                      const std::vector<int>& seq_lens,
                                      const std::vector<int>& depths) {
  if (seq_lens.empty() || depths.empty()) {
    throw std::invalid_argument("regime_sweep: ranges must be non-empty");
  }
  std::vector<RegimePoint> out;
  out.reserve(seq_lens.size() * depths.size());
  for (int T : seq_lens) {
    for (int D : depths) {
      CostReport r = flop_estimate(config, T, D);
      out.push_back({T, D, r.flops_per_gradient()});
    }
  }
  return out;
}

}  // namespace mtp
