#pragma once

#include <cstdint>
#include <limits>
#include <vector>

namespace tp {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) {
  return splitmix64(h ^ (v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2)));
}

/// Small seeded generator; satisfies std::uniform_random_bit_generator.
class Rng {
 public:
  using result_type = std::uint64_t;
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    return splitmix64(state_++);
  }
  /// Uniform in [0, n). n must be nonzero.
  std::uint64_t below(std::uint64_t n) {
    // Lemire's multiply-shift; bias is irrelevant at these ranges.
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>((*this)()) * n) >> 64);
  }
  bool chance(std::uint64_t num, std::uint64_t den) { return below(den) < num; }

 private:
  std::uint64_t state_;
};

/// Replayable source of the under-defined choices the hardware makes.
///
/// Words are drawn from independent lanes: one per security domain plus a
/// kernel lane for the switch mechanism. The word at position k of a lane is
/// a pure function of (lane seed, k), so two oracles agreeing on a lane seed
/// agree on everything drawn from that lane regardless of how much the other
/// lanes were consumed.
class NondetOracle {
 public:
  static constexpr std::uint32_t kKernelLane = 0xffffffffu;

  explicit NondetOracle(std::uint64_t seed = 0) : seed_(seed) {}

  void select_lane(std::uint32_t lane) { active_ = slot(lane); }
  std::uint32_t active_lane() const { return lanes_.empty() ? kKernelLane : lanes_[active_].id; }

  /// Replaces the seed of one lane (used to make hidden lanes independent
  /// across the two runs of a noninterference pair).
  void set_lane_seed(std::uint32_t lane, std::uint64_t seed) {
    auto& l = lanes_[slot(lane)];
    l.seed = seed;
    l.counter = 0;
  }

  std::uint64_t next() {
    if (lanes_.empty()) select_lane(kKernelLane);
    auto& l = lanes_[active_];
    return hash_combine(l.seed, l.counter++);
  }

  std::uint64_t consumed(std::uint32_t lane) const {
    for (const auto& l : lanes_)
      if (l.id == lane) return l.counter;
    return 0;
  }

  bool operator==(const NondetOracle&) const = default;

 private:
  struct Lane {
    std::uint32_t id;
    std::uint64_t seed;
    std::uint64_t counter;
    bool operator==(const Lane&) const = default;
  };

  std::size_t slot(std::uint32_t lane) {
    for (std::size_t i = 0; i < lanes_.size(); ++i)
      if (lanes_[i].id == lane) return i;
    lanes_.push_back(Lane{lane, hash_combine(seed_, lane), 0});
    return lanes_.size() - 1;
  }

  std::uint64_t seed_;
  std::vector<Lane> lanes_;
  std::size_t active_ = 0;
};

}  // namespace tp
