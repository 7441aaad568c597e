#pragma once

#include "mtp/params.hpp"
#include "mtp/tensor.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

namespace mtp {

enum class StrategyKind { kNtpOnly, kJtp, kMarginalMtp, kSequentialMtp };

std::string to_string(StrategyKind k);
StrategyKind strategy_from_string(const std::string& s);

struct HeadStrategy {
  StrategyKind kind = StrategyKind::kNtpOnly;
  int depth = 0;        // D: future tokens beyond the next one
  double lambda = 1.0;  // MTP loss weight
  double gamma = 1.0;   // hidden-state mix-in for the fetch window
  bool gamma_learnable = false;
  bool row0_skip = false;  // also add the h skip to window row 0 (off by default)
  // Route the next-token loss through the fetch row-0 path. On for JTP;
  // forcing it on for kNtpOnly reproduces the D=0 degenerate case exactly.
  bool adjusted_ntp = false;

  void validate() const;
  bool uses_fetch() const { return kind == StrategyKind::kJtp || adjusted_ntp; }

  static HeadStrategy make(StrategyKind kind, int depth, double lambda = 1.0,
                           double gamma = 1.0, bool gamma_learnable = false);
};

/// Single-layer causal self-attention over the teacher-forced window; no MLP,
/// no layer norm, no projection biases. Parameter cost is 4*d^2 plus the
/// (D+1) x d window-positional rows (plus gamma when learnable).
struct FetchParams {
  Tensor wq, wk, wv, wo;
  Tensor wpos;   // (D+1) x d
  Tensor gamma;  // 1x1
};

FetchParams make_fetch(ParamRegistry& reg, int d_model, int depth, double gamma,
                       bool gamma_learnable, std::mt19937_64& rng);

/// Per-term decomposition of one loss evaluation. Anchors are 1-indexed:
/// the NTP term at anchor t predicts x_t from h_{t-1};
/// the MTP term (t, i) predicts x_{t+i}. Values are batch means per term.
struct LossBreakdown {
  std::vector<std::pair<int, double>> ntp_terms;            // (anchor, value)
  std::vector<std::tuple<int, int, double>> mtp_terms;      // (anchor, offset, value)
  double ntp_mean = 0.0;
  double mtp_mean = 0.0;
  double combined = 0.0;  // ntp_mean + lambda * mtp_mean
  int ntp_count = 0;      // valid terms per sample
  int mtp_count = 0;

  double mtp_mean_at_anchor(int anchor) const;
};

/// Windowing rule shared by all strategies: the NTP term at anchor t exists
/// iff mask[t]; the MTP term (t, i), i = 1..D, exists iff t+i <= T-1 and
/// mask[t+i]. Returns per-anchor valid offsets for t = 1..T-1.
struct WindowPlan {
  int seq_len = 0;
  int depth = 0;
  std::vector<uint8_t> ntp_valid;               // index t-1
  std::vector<std::vector<int>> valid_offsets;  // index t-1
  int ntp_count = 0;
  int mtp_count = 0;
  int mtp_anchor_count = 0;  // anchors with >= 1 valid offset
};

WindowPlan plan_windows(int seq_len, int depth, const std::vector<uint8_t>& mask);

}  // namespace mtp
