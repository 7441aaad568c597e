// Acceptance gate: one pass/fail line per criterion, asserted via doctest.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mtp/accounting.hpp"
#include "mtp/model.hpp"
#include "mtp/rng.hpp"
#include "mtp/tasks.hpp"
#include "mtp/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace mtp;
namespace fs = std::filesystem;

namespace {

void report(int n, const std::string& desc, bool ok) {
  std::printf("criterion %d: %-60s [%s]\n", n, desc.c_str(),
              ok ? "PASS" : "FAIL");
  std::fflush(stdout);
  CHECK_MESSAGE(ok, "criterion " << n << ": " << desc);
}

BackboneConfig make_cfg(int L, int d, int heads, int vocab, int max_t) {
  BackboneConfig c;
  c.n_layers = L;
  c.d_model = d;
  c.n_heads = heads;
  c.mlp_factor = 4;
  c.vocab_size = vocab;
  c.max_seq_len = max_t;
  return c;
}

Batch random_batch(int vocab, int B, int T, uint64_t seed) {
  auto rng = make_rng(seed, SeedStream::kTrainData, 0);
  std::uniform_int_distribution<int> pick(0, vocab - 1);
  Batch b;
  b.batch_size = B;
  b.seq_len = T;
  b.tokens.resize(static_cast<size_t>(B) * T);
  for (auto& t : b.tokens) t = pick(rng);
  b.loss_mask = std::vector<uint8_t>(T, 1);
  return b;
}

// Move the model off the tiny-init saddle so every gradient path carries a
// measurable signal for central differences.
void perturb(Model& m, uint64_t seed) {
  auto rng = make_rng(seed, SeedStream::kInit, 7);
  for (auto& p : m.params().all())
    if (p.decay)
      p.tensor.value() += normal_init(p.tensor.rows(), p.tensor.cols(), 0.3, rng);
}

double full_loss_grad_check(StrategyKind kind, int D, uint64_t seed) {
  BackboneConfig cfg = make_cfg(1, 16, 2, 11, 8);
  Model m(cfg, HeadStrategy::make(kind, D, 0.8), seed);
  perturb(m, seed);
  Batch batch = random_batch(cfg.vocab_size, 1, 8, seed + 1);
  auto f = [&]() { return m.compute_loss(batch).loss; };
  std::vector<Tensor> params;
  for (auto& p : m.params().all()) params.push_back(p.tensor);
  return grad_check(f, params);
}

std::pair<int64_t, int64_t> brute_tally(int T, int D,
                                        const std::vector<uint8_t>& mask) {
  int64_t ntp = 0, mtp = 0;
  for (int t = 1; t <= T - 1; ++t) {
    if (mask[t]) ++ntp;
    for (int i = 1; i <= D; ++i)
      if (t + i <= T - 1 && mask[t + i]) ++mtp;
  }
  return {ntp, mtp};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

double elapsed_s(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

}  // namespace

TEST_CASE("criterion 1: gradient correctness") {
  const double e_jtp = full_loss_grad_check(StrategyKind::kJtp, 2, 5);
  const double e_marg = full_loss_grad_check(StrategyKind::kMarginalMtp, 2, 6);
  const double e_seq = full_loss_grad_check(StrategyKind::kSequentialMtp, 2, 7);
  const bool ok = e_jtp < 1e-4 && e_marg < 1e-4 && e_seq < 1e-4;
  std::printf("  grad_check max rel err: jtp %.3g, marginal %.3g, sequential %.3g\n",
              e_jtp, e_marg, e_seq);
  report(1, "full-loss grad_check < 1e-4 (jtp/marginal/sequential)", ok);
}

TEST_CASE("criterion 2: bottleneck locality") {
  const int T = 7, D = 2;
  bool jtp_local = true, seq_violates = true;
  auto seeds = make_rng(99, SeedStream::kInit, 0);
  for (int model_i = 0; model_i < 20; ++model_i) {
    const uint64_t seed = seeds();
    BackboneConfig cfg = make_cfg(1, 16, 2, 11, 16);
    Batch batch = random_batch(cfg.vocab_size, 1, T, seed);
    WindowPlan wp = plan_windows(T, D, batch.loss_mask);

    Model jtp(cfg, HeadStrategy::make(StrategyKind::kJtp, D), seed);
    for (int t = 1; t <= T - 1; ++t) {
      std::vector<int> offsets = wp.valid_offsets[t - 1];
      if (wp.ntp_valid[t - 1]) offsets.insert(offsets.begin(), 0);
      for (int off : offsets) {
        jtp.params().zero_grad();
        LossGraph lg = jtp.compute_loss(batch, LossOptions{t, off});
        backward(lg.loss);
        const Mat& g = lg.hidden.grad();
        for (int s = 0; s < T; ++s) {
          const double row_norm = g.row(s).cwiseAbs().maxCoeff();
          if (s == t - 1 ? row_norm == 0.0 : row_norm != 0.0) jtp_local = false;
        }
      }
    }

    Model seq(cfg, HeadStrategy::make(StrategyKind::kSequentialMtp, D), seed);
    bool violated = false;
    for (int t = 1; t <= T - 1 && !violated; ++t) {
      for (int off : wp.valid_offsets[t - 1]) {
        seq.params().zero_grad();
        LossGraph lg = seq.compute_loss(batch, LossOptions{t, off});
        backward(lg.loss);
        const Mat& g = lg.hidden.grad();
        for (int s = 0; s < T; ++s)
          if (s != t - 1 && g.row(s).cwiseAbs().maxCoeff() > 0.0) violated = true;
      }
    }
    if (!violated) seq_violates = false;
  }
  report(2, "JTP terms touch only h_{t-1}; sequential leaks (20 models)",
         jtp_local && seq_violates);
}

TEST_CASE("criterion 3: parameter invariance") {
  BackboneConfig cfg = make_cfg(2, 384, 8, 56, 40);
  auto count = [&](StrategyKind k, int D, bool glearn = false) {
    return Model(cfg, HeadStrategy::make(k, D, 1.0, 1.0, glearn), 0)
        .count_parameters();
  };
  const int64_t c1 = count(StrategyKind::kJtp, 1);
  const int64_t c3 = count(StrategyKind::kJtp, 3);
  const int64_t c8 = count(StrategyKind::kJtp, 8);
  const bool depth_ok =
      (c3 - c1 == 2 * cfg.d_model) && (c8 - c3 == 5 * cfg.d_model);

  const int D = 3;
  const int64_t n_ntp = count(StrategyKind::kNtpOnly, 0);
  const int64_t n_jtp = count(StrategyKind::kJtp, D);
  const bool delta_ok =
      n_jtp - n_ntp == 589824 + (D + 1) * static_cast<int64_t>(cfg.d_model);
  const bool gamma_ok = count(StrategyKind::kJtp, D, true) - n_jtp == 1;
  report(3, "JTP count varies only by (dD)*d; JTP-NTP = 589824 + pos + gamma",
         depth_ok && delta_ok && gamma_ok);
}

TEST_CASE("criterion 4: couplet separation") {
  auto t0 = std::chrono::steady_clock::now();
  TrainConfig cfg;
  cfg.task.kind = TaskConfig::Kind::kCouplet;
  cfg.backbone = make_cfg(2, 64, 4, couplet_vocab().size(), 8);
  // lr / lambda / gamma are free knobs (the criterion pins D, d_model, L,
  // batch, and the step cap); these settle the fetch attention fastest
  cfg.strategy = HeadStrategy::make(StrategyKind::kJtp, 3, 4.0, 0.25);
  cfg.opt = OptimizerConfig{3e-3, 0.9, 0.95, 0.0, 1e-8};
  cfg.batch_size = 256;
  cfg.max_steps = 3000;
  cfg.eval_every = 100;
  cfg.eval_samples = 512;
  cfg.seed = 11;

  Model jtp(cfg.backbone, cfg.strategy, cfg.seed);
  TrainCallbacks cb;
  // for couplet runs full_match carries the anchor MTP loss
  cb.on_eval = [](const EvalRecord& r) { return r.full_match < 0.045; };
  train(jtp, cfg, cb);
  CoupletEval je = evaluate_couplet(jtp, 2000, 123);

  TrainConfig mcfg = cfg;
  mcfg.strategy = HeadStrategy::make(StrategyKind::kMarginalMtp, 3, 4.0);
  mcfg.max_steps = 600;  // converges to its analytic floor well before this
  mcfg.eval_every = 0;
  Model marg(mcfg.backbone, mcfg.strategy, mcfg.seed);
  train(marg, mcfg, {});
  CoupletEval me = evaluate_couplet(marg, 2000, 123);

  std::printf("  anchor MTP loss: jtp %.4f (< 0.05), marginal %.4f (> 0.6), %.0f s\n",
              je.anchor_mtp, me.anchor_mtp, elapsed_s(t0));
  report(4, "couplet anchor MTP: JTP < 0.05 nats, marginal > 0.6 nats",
         je.anchor_mtp < 0.05 && me.anchor_mtp > 0.6);
}

TEST_CASE("criterion 5: star-graph separation") {
  auto t0 = std::chrono::steady_clock::now();
  StarGraphSpec spec{2, 5, 12};
  Vocabulary vocab{12};
  TrainConfig cfg;
  cfg.task.kind = TaskConfig::Kind::kStar;
  cfg.task.star = spec;
  cfg.backbone = make_cfg(2, 128, 4, vocab.size(), spec.seq_len());
  cfg.backbone.tie_embeddings = true;
  cfg.strategy = HeadStrategy::make(StrategyKind::kJtp, 3, 4.0);
  cfg.opt = OptimizerConfig{1e-3, 0.9, 0.95, 0.01, 1e-8};
  cfg.batch_size = 256;
  cfg.max_steps = 5000;
  cfg.eval_every = 100;
  cfg.eval_samples = 200;
  cfg.seed = 11;

  auto stop_when_solved = [](const EvalRecord& r) { return r.full_match >= 0.97; };

  Model jtp(cfg.backbone, cfg.strategy, cfg.seed);
  train(jtp, cfg, TrainCallbacks{{}, stop_when_solved});
  AccuracyReport ja = evaluate_star(model_decoder(jtp), spec, vocab, 1000, 777);

  TrainConfig ncfg = cfg;
  ncfg.strategy = HeadStrategy::make(StrategyKind::kNtpOnly, 0);
  ncfg.max_steps = 1000;
  Model ntp(ncfg.backbone, ncfg.strategy, ncfg.seed);
  train(ntp, ncfg, TrainCallbacks{{}, stop_when_solved});
  AccuracyReport na = evaluate_star(model_decoder(ntp), spec, vocab, 1000, 777);

  std::printf("  G(2,5) full-match: jtp %.3f (>= 0.95), ntp %.3f (<= 0.60), %.0f s\n",
              ja.full_acc(), na.full_acc(), elapsed_s(t0));
  report(5, "star G(2,5): JTP >= 95% full-match, NTP-only <= 60%",
         ja.full_acc() >= 0.95 && na.full_acc() <= 0.60);
}

TEST_CASE("criterion 6: loss-term tallies") {
  bool grid_ok = true;
  for (int T = 2; T <= 32 && grid_ok; ++T) {
    std::vector<uint8_t> ones(T, 1);
    for (int D = 0; D <= 8; ++D) {
      if (gradient_tally(T, D) != brute_tally(T, D, ones)) grid_ok = false;
      if (gradient_tally(T, D, ones) != brute_tally(T, D, ones)) grid_ok = false;
    }
  }

  bool mask_ok = true, loss_ok = true;
  auto rng = make_rng(1, SeedStream::kInit, 0);
  std::bernoulli_distribution coin(0.5);
  for (int it = 0; it < 200 && mask_ok; ++it) {
    const int T = 2 + static_cast<int>(rng() % 31);
    const int D = static_cast<int>(rng() % 9);
    std::vector<uint8_t> mask(T);
    for (auto& m : mask) m = coin(rng);
    if (gradient_tally(T, D, mask) != brute_tally(T, D, mask)) mask_ok = false;
  }
  BackboneConfig cfg = make_cfg(1, 8, 2, 7, 16);
  for (int it = 0; it < 10 && loss_ok; ++it) {
    const int T = 4 + static_cast<int>(rng() % 10);
    const int D = 1 + static_cast<int>(rng() % 3);
    Model m(cfg, HeadStrategy::make(StrategyKind::kJtp, D), it);
    Batch b = random_batch(cfg.vocab_size, 1, T, it + 40);
    for (auto& x : b.loss_mask) x = coin(rng);
    LossGraph lg = m.compute_loss(b);
    auto [ntp, mtp] = gradient_tally(T, D, b.loss_mask);
    if (lg.breakdown.ntp_count != ntp || lg.breakdown.mtp_count != mtp ||
        static_cast<int64_t>(lg.breakdown.ntp_terms.size()) != ntp ||
        static_cast<int64_t>(lg.breakdown.mtp_terms.size()) != mtp)
      loss_ok = false;
  }
  report(6, "gradient_tally == brute force == emitted loss terms",
         grid_ok && mask_ok && loss_ok);
}

TEST_CASE("criterion 7: flops-per-gradient regime") {
  BackboneConfig cfg = make_cfg(6, 384, 8, 56, 256);
  const double regime_edge = std::sqrt(256.0 * 6.0);  // ~39.2
  std::vector<int> depths;
  for (int D = 1; D <= static_cast<int>(regime_edge); ++D) depths.push_back(D);
  std::vector<RegimePoint> pts = regime_sweep(cfg, {256}, depths);
  bool falling = true;
  for (int i = 0; i < 3; ++i)
    if (!(pts[i + 1].flops_per_gradient < pts[i].flops_per_gradient))
      falling = false;
  int argmin = 0;
  for (size_t i = 1; i < pts.size(); ++i)
    if (pts[i].flops_per_gradient < pts[argmin].flops_per_gradient)
      argmin = static_cast<int>(i);
  const double best_d = pts[argmin].depth;
  std::printf("  argmin over the swept regime: D = %g (edge %.1f)\n", best_d,
              regime_edge);
  report(7, "ratio falls D=1..4; argmin inside (1, sqrt(T*L)) sweep",
         falling && best_d > 1.0 && best_d < regime_edge);
}

TEST_CASE("criterion 8: random-arm calibration") {
  bool ok = true;
  for (int d : {2, 5}) {
    StarGraphSpec spec{d, 5, 50};
    Vocabulary vocab{50};
    auto rng = std::make_shared<std::mt19937_64>(
        derive_seed(17, SeedStream::kEvalData, 0));
    DecodeFn random_arm = [&, rng](const StarSample& s, const std::vector<int>&,
                                   int) {
      std::vector<int> children;
      for (auto [u, v] : s.edges)
        if (u == s.start) children.push_back(v);
      std::uniform_int_distribution<size_t> pick(0, children.size() - 1);
      std::vector<int> out{vocab.encode_label(s.start)};
      int cur = children[pick(*rng)];
      while (true) {
        out.push_back(vocab.encode_label(cur));
        int next = -1;
        for (auto [u, v] : s.edges)
          if (u == cur) next = v;
        if (next < 0) break;
        cur = next;
      }
      out.push_back(Vocabulary::kEos);
      return out;
    };
    AccuracyReport rep = evaluate_star(random_arm, spec, vocab, 10000, 17);
    const double expect = 1.0 / d;
    std::printf("  G(%d,5): random-arm full-match %.4f (expect %.2f +- 0.03)\n",
                d, rep.full_acc(), expect);
    if (std::abs(rep.full_acc() - expect) > 0.03) ok = false;
  }
  report(8, "random-arm stub scores 1/d +- 0.03 on G(2,5), G(5,5)", ok);
}

TEST_CASE("criterion 9: training determinism") {
  fs::path d1 = fs::temp_directory_path() / "mtpb_acc_det1";
  fs::path d2 = fs::temp_directory_path() / "mtpb_acc_det2";
  fs::remove_all(d1);
  fs::remove_all(d2);
  const std::string base =
      std::string(MTPB_BIN) +
      " train --task couplet --strategy jtp --D 2 --d_model 32 --n_layers 1 "
      "--n_heads 2 --batch 16 --steps 30 --seed 9";
  const int rc1 =
      std::system((base + " --out_dir " + d1.string() + " > /dev/null 2>&1").c_str());
  const int rc2 = std::system((std::string(MTPB_BIN) + " train --spec " +
                               (d1 / "resolved.spec").string() + " --out_dir " +
                               d2.string() + " > /dev/null 2>&1")
                                  .c_str());
  const std::string m1 = slurp(d1 / "metrics.csv");
  const bool ok = rc1 == 0 && rc2 == 0 && !m1.empty() &&
                  m1 == slurp(d2 / "metrics.csv");
  report(9, "two runs from one resolved spec: byte-identical metrics", ok);
}
