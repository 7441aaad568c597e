#pragma once

#include "mtp/model.hpp"
#include "mtp/tasks.hpp"

#include <functional>
#include <string>
#include <vector>

namespace mtp {

struct OptimizerConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.01;
  double eps = 1e-8;

  void validate() const;
};

/// Decoupled weight decay Adam. Decay applies only to parameters registered
/// as decay-eligible (weight matrices; not biases, norms, or embeddings).
class AdamW {
 public:
  explicit AdamW(const OptimizerConfig& cfg) : cfg_(cfg) { cfg.validate(); }

  /// One update over all trainable parameters with gradients.
  void step(std::vector<Parameter>& params);
  int64_t step_count() const { return t_; }

  /// Current learning rate; lets a schedule (e.g. warmup) adjust it per step.
  void set_lr(double lr) { cfg_.lr = lr; }

 private:
  OptimizerConfig cfg_;
  int64_t t_ = 0;
  std::vector<Mat> m_, v_;
};

/// Rescales gradients so their global L2 norm is at most max_norm.
/// Returns the pre-clip norm.
double clip_global_norm(std::vector<Parameter>& params, double max_norm);

struct Dataset {
  int seq_len = 0;
  std::vector<std::vector<int>> tokens;
  std::vector<uint8_t> loss_mask;
};

/// Parses the datagen line format ("...\ttokens=i0,i1,...\tmask=0/1...").
Dataset load_dataset(const std::string& path);

struct TaskConfig {
  enum class Kind { kStar, kCouplet };
  Kind kind = Kind::kStar;
  StarGraphSpec star;
  std::shared_ptr<Dataset> dataset;  // optional: cycle a file instead of streaming

  Vocabulary vocab() const {
    return kind == Kind::kStar ? Vocabulary{star.label_universe} : couplet_vocab();
  }
  int seq_len() const { return kind == Kind::kStar ? star.seq_len() : 8; }
  Batch make_batch(int batch_size, uint64_t seed, SeedStream stream,
                   uint64_t counter0) const;
};

struct TrainConfig {
  BackboneConfig backbone;
  HeadStrategy strategy;
  TaskConfig task;
  OptimizerConfig opt;
  int batch_size = 256;
  int max_steps = 1000;
  int warmup_steps = 0;  // linear lr ramp from 0 over the first N steps
  int eval_every = 0;  // 0 disables periodic evaluation
  int eval_samples = 1000;
  uint64_t seed = 0;
  double clip_norm = 1.0;  // <= 0 disables clipping
  double divergence_loss = 1e4;

  void validate() const;
};

struct StepRecord {
  int step = 0;
  double ntp_loss = 0, mtp_loss = 0, combined = 0, grad_norm = 0;
};

struct EvalRecord {
  int step = 0;
  // star: full-match / second-node accuracies with a Wilson interval on
  // full-match. couplet: full_match carries the teacher-forced MTP loss at
  // the post-x3 anchor and second_node its NTP term (ci fields zero).
  double full_match = 0, second_node = 0, ci_low = 0, ci_high = 0;
  int64_t tokens_seen = 0;
  double wallclock_s = 0;
};

struct RunMetrics {
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
  bool diverged = false;
};

struct TrainCallbacks {
  std::function<void(const StepRecord&)> on_step;
  /// Return true to stop training early.
  std::function<bool(const EvalRecord&)> on_eval;
};

/// Fresh-batch training per the experimental protocol: sample, forward,
/// backward, clip, AdamW. Deterministic given (config, seed). On divergence
/// the model is rolled back to the last finite step.
RunMetrics train(Model& model, const TrainConfig& cfg,
                 const TrainCallbacks& cb = {});

/// Repeated argmax continuation (ties toward the lowest token id), stopping
/// at EOS or after max_new tokens. Recomputes the full prefix each step.
std::vector<int> greedy_decode(Model& model, const std::vector<int>& prompt,
                               int max_new, int eos_id = Vocabulary::kEos);

struct WilsonInterval {
  double low = 0, high = 0;
};
WilsonInterval wilson_interval(int successes, int n, double z = 1.96);

struct AccuracyReport {
  int n = 0;
  int full_matches = 0;
  int second_node_hits = 0;
  double full_acc() const { return n ? static_cast<double>(full_matches) / n : 0.0; }
  double second_acc() const { return n ? static_cast<double>(second_node_hits) / n : 0.0; }
  WilsonInterval full_ci() const { return wilson_interval(full_matches, n); }
};

/// Decoder under test: produces >= l tokens continuing the prompt.
using DecodeFn = std::function<std::vector<int>(const StarSample&,
                                                const std::vector<int>& prompt,
                                                int max_new)>;

/// Accuracy over n freshly drawn samples from a dedicated eval seed stream.
AccuracyReport evaluate_star(const DecodeFn& decode, const StarGraphSpec& spec,
                             const Vocabulary& vocab, int n_samples,
                             uint64_t base_seed, uint64_t counter0 = 0);

DecodeFn model_decoder(Model& model);

/// Teacher-forced couplet diagnostics on fresh samples: mean MTP loss and
/// NTP term at the post-x3 anchor.
struct CoupletEval {
  double anchor_mtp = 0;
  double anchor_ntp = 0;
};
CoupletEval evaluate_couplet(Model& model, int n_samples, uint64_t base_seed,
                             uint64_t counter0 = 0);

}  // namespace mtp
