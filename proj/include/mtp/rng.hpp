#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace mtp {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// All randomness in a run flows from one base seed through named streams,
/// so that e.g. eval-data seeds can never collide with train-data seeds.
enum class SeedStream : uint64_t {
  kInit = 0x11,
  kTrainData = 0x22,
  kEvalData = 0x33,
};

inline uint64_t derive_seed(uint64_t base, SeedStream stream, uint64_t counter) {
  uint64_t s = splitmix64(base ^ (0xA5A5A5A5A5A5A5A5ULL * static_cast<uint64_t>(stream)));
  return splitmix64(s ^ counter);
}

inline std::mt19937_64 make_rng(uint64_t base, SeedStream stream, uint64_t counter) {
  return std::mt19937_64(derive_seed(base, stream, counter));
}

}  // namespace mtp
