#include "mtp/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace mtp {

int Vocabulary::encode_label(int v) const {
  if (v < 1 || v > n_labels) {
    throw std::out_of_range("vocab: label " + std::to_string(v) +
                            " outside 1.." + std::to_string(n_labels));
  }
  return 5 + v;
}

int Vocabulary::decode_label(int id) const {
  if (!is_label(id)) {
    throw std::out_of_range("vocab: id " + std::to_string(id) +
                            " is not a node label");
  }
  return id - 5;
}

void StarGraphSpec::validate() const {
  if (arms < 2 || path_len < 2) {
    throw std::invalid_argument("star spec: need d >= 2 and l >= 2");
  }
  if (n_nodes() > label_universe) {
    throw std::invalid_argument(
        "star spec: d*(l-1)+1 = " + std::to_string(n_nodes()) +
        " labels do not fit in N = " + std::to_string(label_universe));
  }
}

StarSample sample_star_graph(const StarGraphSpec& spec, uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);

  // distinct labels via a partial Fisher-Yates over 1..N
  std::vector<int> pool(spec.label_universe);
  std::iota(pool.begin(), pool.end(), 1);
  const int need = spec.n_nodes();
  for (int i = 0; i < need; ++i) {
    std::uniform_int_distribution<int> pick(i, spec.label_universe - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }

  StarSample s;
  const int center = pool[0];
  std::vector<std::vector<int>> arms(spec.arms);
  int next = 1;
  for (int a = 0; a < spec.arms; ++a) {
    arms[a].push_back(center);
    for (int j = 1; j < spec.path_len; ++j) arms[a].push_back(pool[next++]);
    for (int j = 0; j + 1 < spec.path_len; ++j)
      s.edges.emplace_back(arms[a][j], arms[a][j + 1]);
  }
  std::uniform_int_distribution<int> arm_pick(0, spec.arms - 1);
  const int goal_arm = arm_pick(rng);
  s.start = center;
  s.path = arms[goal_arm];
  s.goal = s.path.back();
  std::shuffle(s.edges.begin(), s.edges.end(), rng);
  return s;
}

void serialize_star(StarSample& s, const Vocabulary& vocab) {
  s.tokens.clear();
  s.tokens.push_back(Vocabulary::kBos);
  for (const auto& [u, v] : s.edges) {
    s.tokens.push_back(vocab.encode_label(u));
    s.tokens.push_back(vocab.encode_label(v));
    s.tokens.push_back(Vocabulary::kEdgeSep);
  }
  s.tokens.push_back(vocab.encode_label(s.start));
  s.tokens.push_back(vocab.encode_label(s.goal));
  s.tokens.push_back(Vocabulary::kEq);
  s.prompt_len = static_cast<int>(s.tokens.size());
  for (int n : s.path) s.tokens.push_back(vocab.encode_label(n));
  s.tokens.push_back(Vocabulary::kEos);
  s.loss_mask.assign(s.tokens.size(), 0);
  for (size_t i = static_cast<size_t>(s.prompt_len); i < s.tokens.size(); ++i)
    s.loss_mask[i] = 1;
}

StarSample deserialize_star(const std::vector<int>& tokens,
                            const StarGraphSpec& spec, const Vocabulary& vocab) {
  if (static_cast<int>(tokens.size()) != spec.seq_len() ||
      tokens.front() != Vocabulary::kBos || tokens.back() != Vocabulary::kEos) {
    throw std::invalid_argument("deserialize_star: malformed sequence");
  }
  StarSample s;
  size_t p = 1;
  for (int e = 0; e < spec.n_edges(); ++e) {
    const int u = vocab.decode_label(tokens[p++]);
    const int v = vocab.decode_label(tokens[p++]);
    if (tokens[p++] != Vocabulary::kEdgeSep)
      throw std::invalid_argument("deserialize_star: missing edge separator");
    s.edges.emplace_back(u, v);
  }
  s.start = vocab.decode_label(tokens[p++]);
  s.goal = vocab.decode_label(tokens[p++]);
  if (tokens[p++] != Vocabulary::kEq)
    throw std::invalid_argument("deserialize_star: missing EQ");
  s.prompt_len = static_cast<int>(p);
  for (int j = 0; j < spec.path_len; ++j)
    s.path.push_back(vocab.decode_label(tokens[p++]));
  s.tokens = tokens;
  s.loss_mask.assign(tokens.size(), 0);
  for (size_t i = static_cast<size_t>(s.prompt_len); i < tokens.size(); ++i)
    s.loss_mask[i] = 1;
  return s;
}

CoupletSample sample_couplet(uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> bit(0, 1);
  CoupletSample s;
  for (int i = 0; i < 4; ++i) s.bits[i] = bit(rng);
  for (int i = 0; i < 3; ++i)
    s.bits[4 + i] = s.bits[3] ? s.bits[i] : 1 - s.bits[i];
  s.tokens.push_back(Vocabulary::kBos);
  for (int b : s.bits) s.tokens.push_back(6 + b);
  s.loss_mask.assign(s.tokens.size(), 0);
  for (size_t i = 1; i < s.tokens.size(); ++i) s.loss_mask[i] = 1;
  return s;
}

double couplet_oracle(PredictionMode mode, int anchor, int offset) {
  // anchors are NTP target positions in the BOS-prefixed sequence:
  // position 4 predicts x4 (hidden state after x3), position 5 predicts x5.
  if (anchor == kCoupletAnchorAfterX3) {
    if (offset == 0) return std::log(2.0);  // x4 is an unseen fair coin
    if (offset >= 1 && offset <= 3) {
      // teacher-forced joint prediction sees x4 and can recover x_{4+i}
      // exactly from (x_i, x4); the marginal stays uniform
      return mode == PredictionMode::kJoint ? 0.0 : std::log(2.0);
    }
    throw std::invalid_argument("couplet_oracle: offset out of range");
  }
  if (anchor > kCoupletAnchorAfterX3 && anchor <= 7) {
    // once x4 is in the observed prefix everything is determined
    if (offset < 0 || anchor + offset > 7)
      throw std::invalid_argument("couplet_oracle: offset out of range");
    return 0.0;
  }
  throw std::invalid_argument("couplet_oracle: unsupported anchor " +
                              std::to_string(anchor));
}

MatchResult exact_match_eval(const std::vector<int>& decoded,
                             const StarSample& sample, const Vocabulary& vocab) {
  const size_t l = sample.path.size();
  if (decoded.size() < l) {
    throw std::invalid_argument("exact_match_eval: decoded path too short (" +
                                std::to_string(decoded.size()) + " < " +
                                std::to_string(l) + ")");
  }
  MatchResult r;
  r.per_token.resize(l);
  r.full_match = true;
  for (size_t j = 0; j < l; ++j) {
    const bool ok = decoded[j] == vocab.encode_label(sample.path[j]);
    r.per_token[j] = ok;
    r.full_match = r.full_match && ok;
  }
  return r;
}

Batch make_star_batch(const StarGraphSpec& spec, const Vocabulary& vocab,
                      int batch_size, uint64_t base_seed, SeedStream stream,
                      uint64_t counter0) {
  Batch b;
  b.batch_size = batch_size;
  b.seq_len = spec.seq_len();
  b.tokens.reserve(static_cast<size_t>(batch_size) * b.seq_len);
  for (int i = 0; i < batch_size; ++i) {
    StarSample s = sample_star_graph(spec, derive_seed(base_seed, stream, counter0 + i));
    serialize_star(s, vocab);
    b.tokens.insert(b.tokens.end(), s.tokens.begin(), s.tokens.end());
    if (i == 0) b.loss_mask = s.loss_mask;
  }
  return b;
}

Batch make_couplet_batch(int batch_size, uint64_t base_seed, SeedStream stream,
                         uint64_t counter0) {
  Batch b;
  b.batch_size = batch_size;
  b.seq_len = 8;
  for (int i = 0; i < batch_size; ++i) {
    CoupletSample s = sample_couplet(derive_seed(base_seed, stream, counter0 + i));
    b.tokens.insert(b.tokens.end(), s.tokens.begin(), s.tokens.end());
    if (i == 0) b.loss_mask = s.loss_mask;
  }
  return b;
}

namespace {

template <typename It>
void join_ints(std::ostringstream& os, It begin, It end, char sep) {
  for (It it = begin; it != end; ++it) {
    if (it != begin) os << sep;
    os << *it;
  }
}

}  // namespace

std::string star_sample_line(const StarSample& s) {
  std::ostringstream os;
  os << "edges=";
  for (size_t i = 0; i < s.edges.size(); ++i) {
    if (i) os << ',';
    os << s.edges[i].first << '-' << s.edges[i].second;
  }
  os << "\tquery=" << s.start << ',' << s.goal << "\tpath=";
  join_ints(os, s.path.begin(), s.path.end(), ',');
  os << "\ttokens=";
  join_ints(os, s.tokens.begin(), s.tokens.end(), ',');
  os << "\tmask=";
  for (uint8_t m : s.loss_mask) os << (m ? '1' : '0');
  return os.str();
}

std::string couplet_sample_line(const CoupletSample& s) {
  std::ostringstream os;
  os << "bits=";
  join_ints(os, s.bits.begin(), s.bits.end(), ',');
  os << "\ttokens=";
  join_ints(os, s.tokens.begin(), s.tokens.end(), ',');
  os << "\tmask=";
  for (uint8_t m : s.loss_mask) os << (m ? '1' : '0');
  return os.str();
}

}  // namespace mtp
