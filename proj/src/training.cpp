#include "mtp/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mtp {

Dataset load_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open dataset: " + path);
  Dataset ds;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<int> toks;
    std::vector<uint8_t> mask;
    std::istringstream fields(line);
    std::string field;
    while (std::getline(fields, field, '\t')) {
      const auto eq = field.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = field.substr(0, eq);
      const std::string val = field.substr(eq + 1);
      if (key == "tokens") {
        std::istringstream vs(val);
        std::string item;
        while (std::getline(vs, item, ',')) toks.push_back(std::stoi(item));
      } else if (key == "mask") {
        for (char c : val) mask.push_back(c == '1');
      }
    }
    if (toks.empty()) throw std::runtime_error("dataset line without tokens: " + path);
    if (ds.tokens.empty()) {
      ds.seq_len = static_cast<int>(toks.size());
      ds.loss_mask = mask;
    } else if (static_cast<int>(toks.size()) != ds.seq_len) {
      throw std::runtime_error("dataset mixes sequence lengths: " + path);
    }
    ds.tokens.push_back(std::move(toks));
  }
  return ds;
}

void OptimizerConfig::validate() const {
  if (lr <= 0.0) throw std::invalid_argument("optimizer: lr must be > 0");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw std::invalid_argument("optimizer: betas must lie in [0, 1)");
  }
  if (weight_decay < 0.0 || eps <= 0.0) {
    throw std::invalid_argument("optimizer: bad weight_decay/eps");
  }
}

void AdamW::step(std::vector<Parameter>& params) {
  if (m_.empty()) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const auto& p : params) {
      m_.push_back(Mat::Zero(p.tensor.rows(), p.tensor.cols()));
      v_.push_back(Mat::Zero(p.tensor.rows(), p.tensor.cols()));
    }
  }
  if (m_.size() != params.size()) {
    throw std::invalid_argument("adamw: parameter set changed under optimizer");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.trainable || !p.tensor.has_grad()) continue;
    const Mat& g = p.tensor.grad();
    if (!g.allFinite()) {
      throw std::runtime_error("adamw: non-finite gradient in parameter " + p.name);
    }
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    Mat update =
        (m_[i] / bc1).array() / ((v_[i] / bc2).array().sqrt() + cfg_.eps);
    if (p.decay && cfg_.weight_decay != 0.0) {
      update.array() += cfg_.weight_decay * p.tensor.value().array();
    }
    p.tensor.value() -= cfg_.lr * update;
  }
}

double clip_global_norm(std::vector<Parameter>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (p.tensor.has_grad()) sq += p.tensor.grad().squaredNorm();
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& p : params) {
      if (p.tensor.has_grad()) p.tensor.ensure_grad() *= s;
    }
  }
  return norm;
}

Batch TaskConfig::make_batch(int batch_size, uint64_t seed, SeedStream stream,
                             uint64_t counter0) const {
  if (dataset) {
    if (dataset->tokens.empty()) {
      throw std::invalid_argument("task: dataset file holds no samples");
    }
    Batch b;
    b.batch_size = batch_size;
    b.seq_len = dataset->seq_len;
    b.loss_mask = dataset->loss_mask;
    for (int i = 0; i < batch_size; ++i) {
      const auto& s =
          dataset->tokens[(counter0 + static_cast<uint64_t>(i)) % dataset->tokens.size()];
      b.tokens.insert(b.tokens.end(), s.begin(), s.end());
    }
    return b;
  }
  if (kind == Kind::kStar) {
    return make_star_batch(star, vocab(), batch_size, seed, stream, counter0);
  }
  return make_couplet_batch(batch_size, seed, stream, counter0);
}

void TrainConfig::validate() const {
  backbone.validate();
  strategy.validate();
  opt.validate();
  if (batch_size < 1 || max_steps < 1 || eval_every < 0 || eval_samples < 0 ||
      warmup_steps < 0) {
    throw std::invalid_argument("train config: counts must be positive");
  }
  if (task.kind == TaskConfig::Kind::kStar) task.star.validate();
  if (task.seq_len() > backbone.max_seq_len) {
    throw std::invalid_argument("train config: task sequence length " +
                                std::to_string(task.seq_len()) +
                                " exceeds max_seq_len");
  }
  if (task.vocab().size() != backbone.vocab_size) {
    throw std::invalid_argument("train config: vocab_size must equal task vocab " +
                                std::to_string(task.vocab().size()));
  }
}

namespace {

std::vector<Mat> snapshot_params(const std::vector<Parameter>& params) {
  std::vector<Mat> s;
  s.reserve(params.size());
  for (const auto& p : params) s.push_back(p.tensor.value());
  return s;
}

void restore_params(std::vector<Parameter>& params, const std::vector<Mat>& snap) {
  for (size_t i = 0; i < params.size(); ++i) params[i].tensor.value() = snap[i];
}

EvalRecord run_eval(Model& model, const TrainConfig& cfg, int step,
                    int64_t tokens_seen, uint64_t& eval_counter, double wallclock_s) {
  EvalRecord r;
  r.step = step;
  r.tokens_seen = tokens_seen;
  r.wallclock_s = wallclock_s;
  if (cfg.task.kind == TaskConfig::Kind::kStar) {
    AccuracyReport rep =
        evaluate_star(model_decoder(model), cfg.task.star, cfg.task.vocab(),
                      cfg.eval_samples, cfg.seed, eval_counter);
    eval_counter += static_cast<uint64_t>(cfg.eval_samples);
    r.full_match = rep.full_acc();
    r.second_node = rep.second_acc();
    auto ci = rep.full_ci();
    r.ci_low = ci.low;
    r.ci_high = ci.high;
  } else {
    CoupletEval ce = evaluate_couplet(model, cfg.eval_samples, cfg.seed, eval_counter);
    eval_counter += static_cast<uint64_t>(cfg.eval_samples);
    r.full_match = ce.anchor_mtp;
    r.second_node = ce.anchor_ntp;
  }
  return r;
}

}  // namespace

RunMetrics train(Model& model, const TrainConfig& cfg, const TrainCallbacks& cb) {
  cfg.validate();
  RunMetrics metrics;
  AdamW opt(cfg.opt);
  auto& params = model.params().all();
  std::vector<Mat> last_good = snapshot_params(params);
  uint64_t data_counter = 0;
  uint64_t eval_counter = 0;
  const auto t0 = std::chrono::steady_clock::now();

  for (int step = 1; step <= cfg.max_steps; ++step) {
    Batch batch = cfg.task.make_batch(cfg.batch_size, cfg.seed,
                                      SeedStream::kTrainData, data_counter);
    data_counter += static_cast<uint64_t>(cfg.batch_size);

    LossGraph lg = model.compute_loss(batch);
    const double combined = lg.breakdown.combined;
    if (!std::isfinite(combined) || combined > cfg.divergence_loss) {
      restore_params(params, last_good);
      metrics.diverged = true;
      break;
    }
    last_good = snapshot_params(params);

    model.params().zero_grad();
    backward(lg.loss);
    const double grad_norm = clip_global_norm(params, cfg.clip_norm);
    if (cfg.warmup_steps > 0)
      opt.set_lr(cfg.opt.lr *
                 std::min(1.0, static_cast<double>(step) / cfg.warmup_steps));
    opt.step(params);

    StepRecord rec{step, lg.breakdown.ntp_mean, lg.breakdown.mtp_mean, combined,
                   grad_norm};
    metrics.steps.push_back(rec);
    if (cb.on_step) cb.on_step(rec);

    if (cfg.eval_every > 0 && step % cfg.eval_every == 0) {
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
              .count();
      EvalRecord er = run_eval(model, cfg, step,
                               static_cast<int64_t>(step) * cfg.batch_size *
                                   cfg.task.seq_len(),
                               eval_counter, secs);
      metrics.evals.push_back(er);
      if (cb.on_eval && cb.on_eval(er)) break;
    }
  }
  return metrics;
}

std::vector<int> greedy_decode(Model& model, const std::vector<int>& prompt,
                               int max_new, int eos_id) {
  if (static_cast<int>(prompt.size()) + max_new > model.config().max_seq_len) {
    throw std::invalid_argument("greedy_decode: prompt + max_new exceeds max_seq_len");
  }
  std::vector<int> seq = prompt;
  std::vector<int> generated;
  for (int n = 0; n < max_new; ++n) {
    std::vector<double> logits = model.next_token_logits(seq);
    int best = 0;
    for (size_t i = 1; i < logits.size(); ++i) {
      if (logits[i] > logits[best]) best = static_cast<int>(i);
    }
    generated.push_back(best);
    seq.push_back(best);
    if (best == eos_id) break;
  }
  return generated;
}

WilsonInterval wilson_interval(int successes, int n, double z) {
  if (n == 0) return {0.0, 0.0};
  const double p = static_cast<double>(successes) / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double center = p + z2 / (2.0 * n);
  const double spread = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n));
  return {(center - spread) / denom, (center + spread) / denom};
}

AccuracyReport evaluate_star(const DecodeFn& decode, const StarGraphSpec& spec,
                             const Vocabulary& vocab, int n_samples,
                             uint64_t base_seed, uint64_t counter0) {
  AccuracyReport rep;
  for (int i = 0; i < n_samples; ++i) {
    StarSample s = sample_star_graph(
        spec, derive_seed(base_seed, SeedStream::kEvalData, counter0 + i));
    serialize_star(s, vocab);
    std::vector<int> prompt(s.tokens.begin(), s.tokens.begin() + s.prompt_len);
    std::vector<int> out = decode(s, prompt, spec.path_len + 1);
    // short decodes (early EOS) count as plain misses
    while (static_cast<int>(out.size()) < spec.path_len)
      out.push_back(Vocabulary::kPad);
    MatchResult m = exact_match_eval(out, s, vocab);
    ++rep.n;
    if (m.full_match) ++rep.full_matches;
    if (m.per_token.size() > 1 && m.per_token[1]) ++rep.second_node_hits;
  }
  return rep;
}

DecodeFn model_decoder(Model& model) {
  return [&model](const StarSample&, const std::vector<int>& prompt,
                  int max_new) { return greedy_decode(model, prompt, max_new); };
}

CoupletEval evaluate_couplet(Model& model, int n_samples, uint64_t base_seed,
                             uint64_t counter0) {
  Batch b = make_couplet_batch(n_samples, base_seed, SeedStream::kEvalData,
                               counter0);
  LossGraph lg = model.compute_loss(b);
  CoupletEval ce;
  ce.anchor_mtp = lg.breakdown.mtp_mean_at_anchor(kCoupletAnchorAfterX3);
  for (const auto& [t, v] : lg.breakdown.ntp_terms) {
    if (t == kCoupletAnchorAfterX3) ce.anchor_ntp = v;
  }
  return ce;
}

}  // namespace mtp
