#pragma once

#include "mtp/training.hpp"

#include <string>

namespace mtp {

/// Flat "key = value" run configuration. Unknown keys are rejected; every
/// run writes its fully-resolved spec next to its outputs.
struct RunSpec {
  std::string task = "star";
  int d = 2;
  int l = 5;
  int N = 50;
  std::string strategy = "ntp";
  int D = 0;
  double lambda = 1.0;
  double gamma = 1.0;
  bool gamma_learnable = false;
  bool row0_skip = false;
  int n_layers = 2;
  int d_model = 128;
  int n_heads = 4;
  int mlp_factor = 4;
  int max_seq_len = 0;  // 0: fit the task sequence length
  bool tie_embeddings = false;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.01;
  double adam_eps = 1e-8;
  double clip_norm = 1.0;
  int batch = 256;
  int steps = 1000;
  int warmup = 0;  // linear lr warmup steps
  int eval_every = 0;
  int eval_samples = 1000;
  uint64_t seed = 0;
  std::string out_dir;
  std::string data;  // optional dataset file; empty streams fresh samples

  /// Assigns one key; throws std::invalid_argument naming unknown keys or
  /// unparseable values.
  void set(const std::string& key, const std::string& value);

  static RunSpec from_file(const std::string& path);
  std::string to_text() const;

  TrainConfig resolve() const;  // validates; throws on bad combinations
};

}  // namespace mtp
