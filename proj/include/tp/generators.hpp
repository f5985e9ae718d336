#pragma once

// Random states, inputs and schedules for property tests and the checkers.

#include <cstdint>
#include <vector>

#include "tp/kernel.hpp"
#include "tp/microarch.hpp"
#include "tp/oracle.hpp"
#include "tp/selector.hpp"

namespace tp {

/// A kernel configuration together with its initial objects and the shape of
/// the random schedules driven through it.
struct Scenario {
  KernelConfig kernel;
  std::vector<ObjectSpec> objects;
  std::size_t slices = 8;
  std::size_t max_inputs = 4;  // per domain per slice
};

inline MicroArchState random_state(const Machine& m, const Universe& universe, Rng& rng) {
  auto s = MicroArchState::initial(m);
  for (auto& w : s.flushable.words) w = rng.chance(1, 8) ? 0 : rng();
  for (std::uint64_t idx = 0; idx < m.geometry.num_sets(); ++idx) randomize_set(s, idx, m, universe, rng);
  s.clock = rng.below(1'000'000);
  return s;
}

/// Initial objects: one page-sized object per user page, leaving the last
/// `free_pages` pages of each region for Allocate.
inline std::vector<ObjectSpec> default_objects(const DomainPolicy& policy, const CacheGeometry& g,
                                               std::size_t free_pages) {
  std::vector<ObjectSpec> out;
  for (std::uint32_t d = 0; d < policy.domains.size(); ++d) {
    const auto& region = policy.domains[d].user_region;
    const auto n = region.size() > free_pages ? region.size() - free_pages : 0;
    for (std::size_t i = 0; i < n; ++i) out.push_back(ObjectSpec{DomainId{d}, region[i].va, g.page_size(), {}});
  }
  return out;
}

inline std::vector<std::uint32_t> object_counts(const std::vector<ObjectSpec>& objects, std::size_t domains) {
  std::vector<std::uint32_t> out(domains, 0);
  for (const auto& o : objects) ++out.at(o.owner.value);
  return out;
}

inline void randomize_payloads(std::vector<ObjectSpec>& objects, DomainId owner, Rng& rng) {
  for (auto& o : objects) {
    if (o.owner != owner) continue;
    o.payload.assign((o.size + 7) / 8, 0);
    for (auto& w : o.payload) w = rng();
  }
}

struct InputMix {
  bool crafted = false;  // also emit cross-domain object reads and raw untracked reads
};

/// One input for `d`, touching only its own objects unless `mix.crafted`.
inline Input random_input(const KernelConfig& cfg, DomainId d, const std::vector<std::uint32_t>& counts,
                          Rng& rng, InputMix mix = {}) {
  const auto own = counts.at(d.value);
  const auto& g = cfg.geometry();
  const std::uint64_t kinds = mix.crafted ? 9 : 7;
  switch (rng.below(kinds)) {
    case 0: {
      UserStep u;
      for (std::uint32_t i = 0; i < own; ++i)
        if (rng.chance(1, 2)) u.objects.push_back(i);
      return u;
    }
    case 1:
      if (own == 0) return KernelCall{};
      return KernelCall{.kind = SyscallKind::ReadObject,
                        .object = ObjectId{d, static_cast<std::uint32_t>(rng.below(own))},
                        .offset = rng.below(g.page_size())};
    case 2:
      if (own == 0) return KernelCall{};
      return KernelCall{.kind = SyscallKind::WriteObject,
                        .object = ObjectId{d, static_cast<std::uint32_t>(rng.below(own))},
                        .offset = rng.below(g.page_size()),
                        .value = rng()};
    case 3:
      return KernelCall{.kind = SyscallKind::Allocate, .size = 1 + rng.below(2 * g.page_size())};
    case 4:
      return KernelCall{.kind = SyscallKind::TouchImage};
    case 5: {
      const auto n = std::min<std::size_t>(cfg.policy.kernel_globals.size(), 63);
      return KernelCall{.kind = SyscallKind::TouchGlobals, .global_mask = rng.below(1ULL << n)};
    }
    case 6:
      return KernelCall{};
    case 7: {
      const auto other = DomainId{static_cast<std::uint32_t>(rng.below(cfg.policy.domains.size()))};
      if (counts.at(other.value) == 0) return KernelCall{};
      return KernelCall{.kind = SyscallKind::ReadObject,
                        .object = ObjectId{other, static_cast<std::uint32_t>(rng.below(counts[other.value]))},
                        .offset = rng.below(g.page_size())};
    }
    default: {
      // Any mapped page of any domain, or something unmapped.
      std::vector<VirtAddr> pool;
      for (const auto& spec : cfg.policy.domains) {
        for (const auto& m : spec.user_region) pool.push_back(m.va);
        for (auto p : spec.kernel_image_pages(g.page_size())) pool.push_back(p);
      }
      pool.push_back(VirtAddr{0x7fff'0000});
      const auto base = pool[rng.below(pool.size())];
      return KernelCall{.kind = SyscallKind::RawRead,
                        .address = VirtAddr{base.value + rng.below(g.page_size())}};
    }
  }
}

inline std::vector<Input> random_inputs(const KernelConfig& cfg, DomainId d,
                                        const std::vector<std::uint32_t>& counts, std::size_t max_inputs,
                                        Rng& rng, InputMix mix = {}) {
  std::vector<Input> out;
  const auto n = rng.below(max_inputs + 1);
  for (std::uint64_t i = 0; i < n; ++i) out.push_back(random_input(cfg, d, counts, rng, mix));
  return out;
}

/// Rounds needed per domain to cover `num_slices` round-robin slices.
inline std::size_t rounds_for(std::size_t num_slices, std::size_t domains) {
  return (num_slices + domains - 1) / domains;
}

/// Fills schedule.slices[d] with random inputs drawn from `rng`.
inline void fill_domain_schedule(Schedule& schedule, const KernelConfig& cfg, DomainId d,
                                 const std::vector<std::uint32_t>& counts, std::size_t max_inputs, Rng& rng,
                                 InputMix mix = {}) {
  const auto n = cfg.policy.domains.size();
  schedule.slices.resize(n);
  auto& rounds = schedule.slices[d.value];
  rounds.clear();
  for (std::size_t r = 0; r < rounds_for(schedule.num_slices, n); ++r)
    rounds.push_back(random_inputs(cfg, d, counts, max_inputs, rng, mix));
}

inline Schedule random_schedule(const KernelConfig& cfg, const std::vector<std::uint32_t>& counts,
                                std::size_t num_slices, std::size_t max_inputs, std::uint64_t seed,
                                InputMix mix = {}) {
  Schedule s;
  s.num_slices = num_slices;
  for (std::uint32_t d = 0; d < cfg.policy.domains.size(); ++d) {
    Rng rng(hash_combine(seed, d));
    fill_domain_schedule(s, cfg, DomainId{d}, counts, max_inputs, rng, mix);
  }
  return s;
}

}  // namespace tp
