#include "mtp/heads.hpp"

#include "mtp/backbone.hpp"

#include <stdexcept>

namespace mtp {

std::string to_string(StrategyKind k) {
  switch (k) {
    case StrategyKind::kNtpOnly: return "ntp";
    case StrategyKind::kJtp: return "jtp";
    case StrategyKind::kMarginalMtp: return "marginal";
    case StrategyKind::kSequentialMtp: return "sequential";
  }
  return "?";
}

StrategyKind strategy_from_string(const std::string& s) {
  if (s == "ntp") return StrategyKind::kNtpOnly;
  if (s == "jtp") return StrategyKind::kJtp;
  if (s == "marginal") return StrategyKind::kMarginalMtp;
  if (s == "sequential") return StrategyKind::kSequentialMtp;
  throw std::invalid_argument("unknown strategy: " + s);
}

void HeadStrategy::validate() const {
  if (lambda <= 0.0) throw std::invalid_argument("strategy: lambda must be > 0");
  if (depth < 0) throw std::invalid_argument("strategy: D must be >= 0");
  if (kind == StrategyKind::kNtpOnly && depth != 0) {
    throw std::invalid_argument("strategy: D > 0 requires an MTP strategy");
  }
  if ((kind == StrategyKind::kMarginalMtp ||
       kind == StrategyKind::kSequentialMtp) &&
      depth < 1) {
    throw std::invalid_argument("strategy: MTP baselines need D >= 1");
  }
}

HeadStrategy HeadStrategy::make(StrategyKind kind, int depth, double lambda,
                                double gamma, bool gamma_learnable) {
  HeadStrategy s;
  s.kind = kind;
  s.depth = depth;
  s.lambda = lambda;
  s.gamma = gamma;
  s.gamma_learnable = gamma_learnable;
  s.adjusted_ntp = (kind == StrategyKind::kJtp);
  s.validate();
  return s;
}

FetchParams make_fetch(ParamRegistry& reg, int d, int depth, double gamma,
                       bool gamma_learnable, std::mt19937_64& rng) {
  FetchParams f;
  f.wq = reg.add("fetch.wq", normal_init(d, d, 0.02, rng), true);
  f.wk = reg.add("fetch.wk", normal_init(d, d, 0.02, rng), true);
  f.wv = reg.add("fetch.wv", normal_init(d, d, 0.02, rng), true);
  f.wo = reg.add("fetch.wo", normal_init(d, d, 0.02, rng), true);
  f.wpos = reg.add("fetch.wpos", normal_init(depth + 1, d, 0.02, rng), false);
  if (gamma_learnable) {
    Mat g(1, 1);
    g(0, 0) = gamma;
    f.gamma = reg.add("fetch.gamma", g, false);
  } else {
    f.gamma = Tensor::scalar(gamma);
  }
  return f;
}

double LossBreakdown::mtp_mean_at_anchor(int anchor) const {
  double sum = 0.0;
  int n = 0;
  for (const auto& [t, i, v] : mtp_terms) {
    if (t == anchor) {
      sum += v;
      ++n;
    }
  }
  return n ? sum / n : 0.0;
}

WindowPlan plan_windows(int seq_len, int depth, const std::vector<uint8_t>& mask) {
  if (seq_len < 2) throw std::invalid_argument("plan_windows: need T >= 2");
  if (static_cast<int>(mask.size()) != seq_len) {
    throw std::invalid_argument("plan_windows: mask length != T");
  }
  WindowPlan p;
  p.seq_len = seq_len;
  p.depth = depth;
  p.ntp_valid.resize(seq_len - 1, 0);
  p.valid_offsets.resize(seq_len - 1);
  for (int t = 1; t <= seq_len - 1; ++t) {
    if (mask[t]) {
      p.ntp_valid[t - 1] = 1;
      ++p.ntp_count;
    }
    for (int i = 1; i <= depth; ++i) {
      if (t + i <= seq_len - 1 && mask[t + i]) {
        p.valid_offsets[t - 1].push_back(i);
        ++p.mtp_count;
      }
    }
    if (!p.valid_offsets[t - 1].empty()) ++p.mtp_anchor_count;
  }
  return p;
}

}  // namespace mtp
