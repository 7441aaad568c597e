#include "mtp/runspec.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mtp {

namespace {

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  throw std::invalid_argument("bad boolean for key " + key + ": " + v);
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const int r = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw std::invalid_argument("bad integer for key " + key + ": " + v);
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw std::invalid_argument("bad number for key " + key + ": " + v);
  }
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const uint64_t r = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw std::invalid_argument("bad seed for key " + key + ": " + v);
  }
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

void RunSpec::set(const std::string& key, const std::string& value) {
  if (key == "task") task = value;
  else if (key == "d") d = parse_int(key, value);
  else if (key == "l") l = parse_int(key, value);
  else if (key == "N") N = parse_int(key, value);
  else if (key == "strategy") strategy = value;
  else if (key == "D") D = parse_int(key, value);
  else if (key == "lambda") lambda = parse_double(key, value);
  else if (key == "gamma") gamma = parse_double(key, value);
  else if (key == "gamma_learnable") gamma_learnable = parse_bool(key, value);
  else if (key == "row0_skip") row0_skip = parse_bool(key, value);
  else if (key == "n_layers") n_layers = parse_int(key, value);
  else if (key == "d_model") d_model = parse_int(key, value);
  else if (key == "n_heads") n_heads = parse_int(key, value);
  else if (key == "mlp_factor") mlp_factor = parse_int(key, value);
  else if (key == "max_seq_len") max_seq_len = parse_int(key, value);
  else if (key == "tie_embeddings") tie_embeddings = parse_bool(key, value);
  else if (key == "lr") lr = parse_double(key, value);
  else if (key == "beta1") beta1 = parse_double(key, value);
  else if (key == "beta2") beta2 = parse_double(key, value);
  else if (key == "weight_decay") weight_decay = parse_double(key, value);
  else if (key == "adam_eps") adam_eps = parse_double(key, value);
  else if (key == "clip_norm") clip_norm = parse_double(key, value);
  else if (key == "batch") batch = parse_int(key, value);
  else if (key == "steps") steps = parse_int(key, value);
  else if (key == "warmup") warmup = parse_int(key, value);
  else if (key == "eval_every") eval_every = parse_int(key, value);
  else if (key == "eval_samples") eval_samples = parse_int(key, value);
  else if (key == "seed") seed = parse_u64(key, value);
  else if (key == "out_dir") out_dir = value;
  else if (key == "data") data = value;
  else throw std::invalid_argument("unknown config key: " + key);
}

RunSpec RunSpec::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open spec file: " + path);
  RunSpec rs;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("spec line " + std::to_string(lineno) +
                                  " is not key = value: " + t);
    }
    rs.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return rs;
}

std::string RunSpec::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "task = " << task << "\n"
     << "d = " << d << "\n"
     << "l = " << l << "\n"
     << "N = " << N << "\n"
     << "strategy = " << strategy << "\n"
     << "D = " << D << "\n"
     << "lambda = " << lambda << "\n"
     << "gamma = " << gamma << "\n"
     << "gamma_learnable = " << (gamma_learnable ? 1 : 0) << "\n"
     << "row0_skip = " << (row0_skip ? 1 : 0) << "\n"
     << "n_layers = " << n_layers << "\n"
     << "d_model = " << d_model << "\n"
     << "n_heads = " << n_heads << "\n"
     << "mlp_factor = " << mlp_factor << "\n"
     << "max_seq_len = " << max_seq_len << "\n"
     << "tie_embeddings = " << (tie_embeddings ? 1 : 0) << "\n"
     << "lr = " << lr << "\n"
     << "beta1 = " << beta1 << "\n"
     << "beta2 = " << beta2 << "\n"
     << "weight_decay = " << weight_decay << "\n"
     << "adam_eps = " << adam_eps << "\n"
     << "clip_norm = " << clip_norm << "\n"
     << "batch = " << batch << "\n"
     << "steps = " << steps << "\n"
     << "warmup = " << warmup << "\n"
     << "eval_every = " << eval_every << "\n"
     << "eval_samples = " << eval_samples << "\n"
     << "seed = " << seed << "\n"
     << "out_dir = " << out_dir << "\n"
     << "data = " << data << "\n";
  return os.str();
}

TrainConfig RunSpec::resolve() const {
  TrainConfig cfg;
  if (task == "star") {
    cfg.task.kind = TaskConfig::Kind::kStar;
    cfg.task.star = StarGraphSpec{d, l, N};
  } else if (task == "couplet") {
    cfg.task.kind = TaskConfig::Kind::kCouplet;
  } else {
    throw std::invalid_argument("unknown task: " + task);
  }
  if (!data.empty()) {
    cfg.task.dataset = std::make_shared<Dataset>(load_dataset(data));
  }
  HeadStrategy s = HeadStrategy::make(strategy_from_string(strategy), D, lambda,
                                      gamma, gamma_learnable);
  s.row0_skip = row0_skip;
  cfg.strategy = s;
  cfg.backbone.n_layers = n_layers;
  cfg.backbone.d_model = d_model;
  cfg.backbone.n_heads = n_heads;
  cfg.backbone.mlp_factor = mlp_factor;
  cfg.backbone.vocab_size = cfg.task.vocab().size();
  cfg.backbone.max_seq_len = max_seq_len > 0 ? max_seq_len : cfg.task.seq_len();
  cfg.backbone.tie_embeddings = tie_embeddings;
  cfg.opt = OptimizerConfig{lr, beta1, beta2, weight_decay, adam_eps};
  cfg.batch_size = batch;
  cfg.max_steps = steps;
  cfg.warmup_steps = warmup;
  cfg.eval_every = eval_every;
  cfg.eval_samples = eval_samples;
  cfg.seed = seed;
  cfg.clip_norm = clip_norm;
  cfg.validate();
  return cfg;
}

}  // namespace mtp
