#pragma once

#include "mtp/model.hpp"
#include "mtp/rng.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace mtp {

/// Fixed token layout: special ids then node labels 1..N at 5+v.
struct Vocabulary {
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEdgeSep = 2;
  static constexpr int kQuerySep = 3;
  static constexpr int kEq = 4;
  static constexpr int kEos = 5;

  int n_labels = 50;

  int size() const { return n_labels + 6; }
  int encode_label(int v) const;  // 1..N -> 5+v
  int decode_label(int id) const; // inverse; throws on non-label ids
  bool is_label(int id) const { return id >= 6 && id <= 5 + n_labels; }
};

struct StarGraphSpec {
  int arms = 2;           // d
  int path_len = 5;       // l, nodes per path including the center
  int label_universe = 50;  // N

  void validate() const;
  int n_nodes() const { return arms * (path_len - 1) + 1; }
  int n_edges() const { return arms * (path_len - 1); }
  // BOS + 3 per edge + start,goal,EQ + l path tokens + EOS
  int seq_len() const { return 3 * n_edges() + path_len + 5; }
  int prompt_len() const { return 3 * n_edges() + 4; }
};

struct StarSample {
  std::vector<std::pair<int, int>> edges;  // (parent, child), shuffled
  int start = 0;
  int goal = 0;
  std::vector<int> path;  // l labels, path[0]=start, path[l-1]=goal
  std::vector<int> tokens;
  std::vector<uint8_t> loss_mask;
  int prompt_len = 0;
};

/// Uniform star graph draw: labels without replacement, goal arm uniform,
/// edge order a uniform permutation. Pure function of (spec, seed).
StarSample sample_star_graph(const StarGraphSpec& spec, uint64_t seed);

/// Fills tokens/loss_mask/prompt_len on a structural sample.
void serialize_star(StarSample& sample, const Vocabulary& vocab);

/// Inverse of serialize_star; used for round-trip checks and file parsing.
StarSample deserialize_star(const std::vector<int>& tokens,
                            const StarGraphSpec& spec, const Vocabulary& vocab);

struct CoupletSample {
  std::array<int, 7> bits{};  // x1..x7
  std::vector<int> tokens;    // BOS then the 7 bit tokens
  std::vector<uint8_t> loss_mask;
};

/// x1..x4 iid Bernoulli(1/2); (x5,x6,x7) copies (x1,x2,x3) when x4=1, else
/// their complements. Bit b is token 6+b (a 2-label vocabulary).
CoupletSample sample_couplet(uint64_t seed);

inline Vocabulary couplet_vocab() { return Vocabulary{2}; }
constexpr int kCoupletAnchorAfterX3 = 4;  // NTP target position of x4

enum class PredictionMode { kJoint, kMarginal };

/// Information-theoretic optimum (nats) for the couplet task at a given
/// anchor/offset: what any predictor could achieve given its inputs.
double couplet_oracle(PredictionMode mode, int anchor, int offset);

struct MatchResult {
  bool full_match = false;
  std::vector<uint8_t> per_token;
};

/// Compares a decoded path (l label tokens) against the ground truth.
/// per_token[1] is the critical second node.
MatchResult exact_match_eval(const std::vector<int>& decoded,
                             const StarSample& sample, const Vocabulary& vocab);

// ---- batches and file formats ----------------------------------------------

Batch make_star_batch(const StarGraphSpec& spec, const Vocabulary& vocab,
                      int batch_size, uint64_t base_seed, SeedStream stream,
                      uint64_t counter0);
Batch make_couplet_batch(int batch_size, uint64_t base_seed, SeedStream stream,
                         uint64_t counter0);

std::string star_sample_line(const StarSample& s);
std::string couplet_sample_line(const CoupletSample& s);

}  // namespace mtp
