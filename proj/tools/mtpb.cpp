// Command-line front end: train / eval / datagen / flops.

#include "mtp/accounting.hpp"
#include "mtp/checkpoint.hpp"
#include "mtp/runspec.hpp"
#include "mtp/tasks.hpp"
#include "mtp/training.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string default_out_dir() {
  const char* env = std::getenv("MTPB_OUT_DIR");
  return env && *env ? env : ".";
}

const std::vector<std::string> kSpecKeys = {
    "task", "d", "l", "N", "strategy", "D", "lambda", "gamma",
    "gamma_learnable", "row0_skip", "n_layers", "d_model", "n_heads",
    "mlp_factor", "max_seq_len", "tie_embeddings", "lr", "beta1", "beta2",
    "weight_decay", "adam_eps", "clip_norm", "batch", "steps", "warmup", "eval_every",
    "eval_samples", "seed", "out_dir", "data"};

int cmd_train(const std::string& spec_path,
              const std::map<std::string, std::string>& overrides) {
  mtp::RunSpec rs;
  if (!spec_path.empty()) rs = mtp::RunSpec::from_file(spec_path);
  for (const auto& [k, v] : overrides) rs.set(k, v);
  mtp::TrainConfig cfg = rs.resolve();

  fs::path out = rs.out_dir.empty() ? default_out_dir() : rs.out_dir;
  fs::create_directories(out);
  rs.out_dir = out.string();
  {
    std::ofstream spec_out(out / "resolved.spec");
    spec_out << rs.to_text();
  }

  mtp::Model model(cfg.backbone, cfg.strategy, cfg.seed);
  std::ofstream metrics(out / "metrics.csv");
  metrics << "step,ntp_loss,mtp_loss,combined,grad_norm\n";
  std::ofstream evals;  // opened on first eval

  mtp::TrainCallbacks cb;
  cb.on_step = [&](const mtp::StepRecord& r) {
    metrics << r.step << ',' << fmt(r.ntp_loss) << ',' << fmt(r.mtp_loss) << ','
            << fmt(r.combined) << ',' << fmt(r.grad_norm) << '\n';
  };
  cb.on_eval = [&](const mtp::EvalRecord& r) {
    if (!evals.is_open()) {
      evals.open(out / "eval.csv");
      evals << "step,full_match,second_node,ci_low,ci_high,tokens_seen,"
               "wallclock_s\n";
    }
    evals << r.step << ',' << fmt(r.full_match) << ',' << fmt(r.second_node)
          << ',' << fmt(r.ci_low) << ',' << fmt(r.ci_high) << ','
          << r.tokens_seen << ',' << fmt(r.wallclock_s) << '\n';
    return false;
  };

  mtp::RunMetrics rm = mtp::train(model, cfg, cb);
  mtp::save_checkpoint((out / "checkpoint.mtpb").string(), model);
  if (rm.diverged) {
    std::cerr << "training diverged; checkpoint holds the last finite step\n";
    return 2;
  }
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& task, int d, int l,
             int N, int n, uint64_t seed) {
  auto model = mtp::load_checkpoint(ckpt);
  if (task == "star") {
    mtp::StarGraphSpec spec{d, l, N};
    spec.validate();
    mtp::Vocabulary vocab{N};
    if (vocab.size() != model->config().vocab_size) {
      std::cerr << "vocab mismatch: task needs " << vocab.size()
                << " ids, checkpoint has " << model->config().vocab_size << "\n";
      return 1;
    }
    mtp::AccuracyReport rep = mtp::evaluate_star(mtp::model_decoder(*model),
                                                 spec, vocab, n, seed);
    auto ci = rep.full_ci();
    std::cout << "{\"n\":" << rep.n << ",\"full_match\":" << fmt(rep.full_acc())
              << ",\"second_node\":" << fmt(rep.second_acc())
              << ",\"ci_low\":" << fmt(ci.low) << ",\"ci_high\":" << fmt(ci.high)
              << "}\n";
    std::cout << rep.n << ',' << fmt(rep.full_acc()) << ','
              << fmt(rep.second_acc()) << ',' << fmt(ci.low) << ','
              << fmt(ci.high) << '\n';
    return 0;
  }
  if (task == "couplet") {
    if (model->config().vocab_size != mtp::couplet_vocab().size()) {
      std::cerr << "vocab mismatch: couplet needs "
                << mtp::couplet_vocab().size() << " ids\n";
      return 1;
    }
    mtp::CoupletEval ce = n > 0 ? mtp::evaluate_couplet(*model, n, seed)
                                : mtp::CoupletEval{};
    std::cout << "{\"n\":" << n << ",\"anchor_mtp\":" << fmt(ce.anchor_mtp)
              << ",\"anchor_ntp\":" << fmt(ce.anchor_ntp) << "}\n";
    std::cout << n << ',' << fmt(ce.anchor_mtp) << ',' << fmt(ce.anchor_ntp)
              << '\n';
    return 0;
  }
  std::cerr << "unknown task: " << task << "\n";
  return 1;
}

int cmd_datagen(const std::string& task, int d, int l, int N, int n,
                uint64_t seed, const std::string& out_path) {
  std::ofstream os(out_path);
  if (!os) {
    std::cerr << "cannot write " << out_path << "\n";
    return 1;
  }
  if (task == "star") {
    mtp::StarGraphSpec spec{d, l, N};
    spec.validate();
    mtp::Vocabulary vocab{N};
    os << "# mtpb datagen task=star d=" << d << " l=" << l << " N=" << N
       << " seed=" << seed
       << " fields: edges=u-v,... query=s,g path=n1,... tokens=i0,i1,... "
          "mask=0/1\n";
    for (int i = 0; i < n; ++i) {
      mtp::StarSample s = mtp::sample_star_graph(
          spec, mtp::derive_seed(seed, mtp::SeedStream::kTrainData, i));
      mtp::serialize_star(s, vocab);
      os << mtp::star_sample_line(s) << '\n';
    }
    return os ? 0 : 1;
  }
  if (task == "couplet") {
    os << "# mtpb datagen task=couplet seed=" << seed
       << " fields: bits=x1,...,x7 tokens=i0,... mask=0/1\n";
    for (int i = 0; i < n; ++i) {
      mtp::CoupletSample s = mtp::sample_couplet(
          mtp::derive_seed(seed, mtp::SeedStream::kTrainData, i));
      os << mtp::couplet_sample_line(s) << '\n';
    }
    return os ? 0 : 1;
  }
  std::cerr << "unknown task: " << task << "\n";
  return 1;
}

int cmd_flops(int n_layers, int d_model, int n_heads, int mlp_factor, int vocab,
              const std::vector<int>& Ts, const std::vector<int>& Ds,
              const std::string& out_path) {
  if (Ts.empty() || Ds.empty()) {
    std::cerr << "flops: need non-empty --T and --D ranges\n";
    return 1;
  }
  mtp::BackboneConfig cfg;
  cfg.n_layers = n_layers;
  cfg.d_model = d_model;
  cfg.n_heads = n_heads;
  cfg.mlp_factor = mlp_factor;
  cfg.vocab_size = vocab;
  cfg.max_seq_len = 1;
  for (int t : Ts) cfg.max_seq_len = std::max(cfg.max_seq_len, t);

  std::ostream* os = &std::cout;
  std::ofstream file;
  if (!out_path.empty()) {
    file.open(out_path);
    if (!file) {
      std::cerr << "cannot write " << out_path << "\n";
      return 1;
    }
    os = &file;
  }
  *os << "# flop convention: 2 flops per multiply-accumulate; softmax and "
         "elementwise costs ignored; backward costed as 2x forward\n";
  *os << "T,L,D,d_model,flops_backbone,flops_fetch,flops_head,"
         "gradient_terms_ntp,gradient_terms_mtp,total_flops,"
         "flops_per_gradient\n";
  for (int t : Ts) {
    for (int dd : Ds) {
      mtp::CostReport r = mtp::flop_estimate(cfg, t, dd);
      *os << r.seq_len << ',' << r.n_layers << ',' << r.depth << ','
          << r.d_model << ',' << r.flops_backbone << ',' << r.flops_fetch
          << ',' << r.flops_head << ',' << r.gradient_terms_ntp << ','
          << r.gradient_terms_mtp << ',' << r.total_flops() << ','
          << fmt(r.flops_per_gradient()) << '\n';
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"joint multi-token prediction lab"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "train a model and write metrics");
  std::string spec_path;
  train->add_option("--spec", spec_path, "run spec file (key = value lines)");
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> opts;
  for (const auto& k : kSpecKeys) {
    opts[k] = train->add_option("--" + k, values[k], "override spec key " + k);
  }

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ckpt, eval_task = "star";
  int e_d = 2, e_l = 5, e_N = 50, e_n = 1000;
  uint64_t e_seed = 1;
  eval->add_option("--checkpoint", ckpt)->required();
  eval->add_option("--task", eval_task);
  eval->add_option("--d", e_d);
  eval->add_option("--l", e_l);
  eval->add_option("--N", e_N);
  eval->add_option("--n", e_n);
  eval->add_option("--seed", e_seed);

  auto* datagen = app.add_subcommand("datagen", "write samples to a file");
  std::string g_task = "star", g_out = "samples.tsv";
  int g_d = 2, g_l = 5, g_N = 50, g_n = 10;
  uint64_t g_seed = 0;
  datagen->add_option("--task", g_task);
  datagen->add_option("--d", g_d);
  datagen->add_option("--l", g_l);
  datagen->add_option("--N", g_N);
  datagen->add_option("--n", g_n);
  datagen->add_option("--seed", g_seed);
  datagen->add_option("--out", g_out);

  auto* flops = app.add_subcommand("flops", "emit the analytic cost model");
  int f_layers = 6, f_dmodel = 384, f_heads = 8, f_mlp = 4, f_vocab = 56;
  std::vector<int> f_T, f_D;
  std::string f_out;
  flops->add_option("--n_layers", f_layers);
  flops->add_option("--d_model", f_dmodel);
  flops->add_option("--n_heads", f_heads);
  flops->add_option("--mlp_factor", f_mlp);
  flops->add_option("--vocab", f_vocab);
  flops->add_option("--T", f_T)->delimiter(',');
  flops->add_option("--D", f_D)->delimiter(',');
  flops->add_option("--out", f_out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (train->parsed()) {
      std::map<std::string, std::string> overrides;
      for (const auto& k : kSpecKeys) {
        if (opts[k]->count()) overrides[k] = values[k];
      }
      return cmd_train(spec_path, overrides);
    }
    if (eval->parsed()) return cmd_eval(ckpt, eval_task, e_d, e_l, e_N, e_n, e_seed);
    if (datagen->parsed())
      return cmd_datagen(g_task, g_d, g_l, g_N, g_n, g_seed, g_out);
    if (flops->parsed())
      return cmd_flops(f_layers, f_dmodel, f_heads, f_mlp, f_vocab, f_T, f_D, f_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
