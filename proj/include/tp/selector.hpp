#pragma once

// The trace selector: picks one adherent hardware trace for a transition,
// keyed only on what the executing domain can observe.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <vector>

#include "tp/address.hpp"
#include "tp/microarch.hpp"
#include "tp/oracle.hpp"
#include "tp/policy.hpp"

namespace tp {

enum class SelectorMode {
  Visible,  // keyed on the executing domain's visible projection
  Peek      // keyed on the whole microarchitectural state (broken on purpose)
};

struct SelectorOptions {
  bool allow_flushes = false;  // interleave OnCoreFlush / OffCoreFlush of tracked pages
  bool allow_pad = false;      // may start with a PadTo a little past the visible clock
};

inline std::uint64_t digest(const VisibleProjection& v) {
  std::uint64_t h = 0x7470'7669'7369'626cULL;
  if (v.flushable) {
    h = hash_combine(h, 1);
    for (auto w : v.flushable->words) h = hash_combine(h, w);
  }
  for (const auto& s : v.sets) {
    h = hash_combine(h, s.index);
    h = hash_combine(h, s.meta);
    for (const auto& e : s.entries) h = hash_combine(h, e.tag ^ (std::uint64_t{e.level} << 56));
  }
  if (v.clock) h = hash_combine(hash_combine(h, 2), *v.clock);
  return h;
}

inline std::uint64_t digest(const MicroArchState& s) {
  std::uint64_t h = 0x6675'6c6c'7374'6174ULL;
  for (auto w : s.flushable.words) h = hash_combine(h, w);
  const auto& p = s.partitionable;
  for (std::uint64_t i = 0; i < p.num_sets(); ++i) {
    h = hash_combine(h, p.meta(i));
    for (const auto& e : p.set(i)) h = hash_combine(h, e.tag ^ (std::uint64_t{e.level} << 56));
  }
  return hash_combine(h, s.clock);
}

namespace detail {

struct Candidate {
  VirtAddr v;
  PhysAddr p;
};

inline std::vector<Candidate> candidate_lines(const TASet& ta, const AddressMap& map,
                                              const CacheGeometry& g) {
  std::vector<Candidate> out;
  for (auto page : ta.pages()) {
    if (!map.is_mapped(VirtAddr{page})) continue;
    for (std::uint64_t off = 0; off < ta.page_size(); off += g.line_size()) {
      VirtAddr v{page + off};
      out.push_back({v, map.translate(v)});
    }
  }
  return out;
}

inline Trace select_keyed(const TASet& ta, std::uint64_t key, std::optional<Cycles> visible_clock,
                          const AddressMap& map, const CacheGeometry& g, std::size_t budget,
                          std::uint64_t seed, SelectorOptions options) {
  Trace trace;
  const auto lines = candidate_lines(ta, map, g);
  if (lines.empty() || budget == 0) return trace;
  Rng rng(hash_combine(seed, key));

  if (options.allow_pad && visible_clock && rng.chance(1, 4))
    trace.push_back(PadTo{*visible_clock + rng.below(16)});

  // Order of line indices to touch.
  std::vector<std::size_t> order(lines.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  switch (rng.below(8)) {
    case 0:
    case 1:
    case 2:
    case 3:  // full sweep in a random order
      std::shuffle(order.begin(), order.end(), rng);
      break;
    case 4:
    case 5: {  // sweep with repetitions
      std::shuffle(order.begin(), order.end(), rng);
      const auto extra = rng.below(lines.size() + 1);
      for (std::uint64_t i = 0; i < extra; ++i)
        order.insert(order.begin() + static_cast<std::ptrdiff_t>(rng.below(order.size() + 1)),
                     rng.below(lines.size()));
      break;
    }
    case 6: {  // random subset
      std::shuffle(order.begin(), order.end(), rng);
      order.resize(1 + rng.below(order.size()));
      break;
    }
    default:  // address order
      break;
  }

  for (auto idx : order) {
    if (trace.size() >= budget) break;
    const auto& c = lines[idx];
    if (rng.chance(1, 2))
      trace.push_back(Read{c.v, c.p});
    else
      trace.push_back(Write{c.v, c.p});
    if (options.allow_flushes && trace.size() < budget && rng.chance(1, 16))
      trace.push_back(OnCoreFlush{});
    if (options.allow_flushes && trace.size() < budget && rng.chance(1, 16)) {
      const auto& target = lines[rng.below(lines.size())];
      trace.push_back(OffCoreFlush{{PhysAddr{g.page_base(target.p.value)}}});
    }
  }
  if (trace.size() > budget) trace.resize(budget);
  return trace;
}

}  // namespace detail

/// Chooses a trace adhering to `ta`. A pure function of its arguments: the
/// only microarchitectural input is the executing domain's projection.
inline Trace select_trace(const TASet& ta, const VisibleProjection& visible, const AddressMap& map,
                          const CacheGeometry& g, std::size_t budget, std::uint64_t seed,
                          SelectorOptions options = {}) {
  return detail::select_keyed(ta, digest(visible), visible.clock, map, g, budget, seed, options);
}

/// Same contract except that it reads the full state. Exists to show the
/// dependency checks catch a selector that peeks at hidden state.
inline Trace select_trace_peeking(const TASet& ta, const MicroArchState& full, const AddressMap& map,
                                  const CacheGeometry& g, std::size_t budget, std::uint64_t seed,
                                  SelectorOptions options = {}) {
  return detail::select_keyed(ta, digest(full), full.clock, map, g, budget, seed, options);
}

/// Fills set `idx` with random lines from the universe that index into it.
inline void randomize_set(MicroArchState& s, std::uint64_t idx, const Machine& m,
                          const Universe& universe, Rng& rng) {
  const auto& pool = universe.lines_in_set(idx);
  auto entries = s.partitionable.set(idx);
  std::vector<PhysAddr> picks(pool.begin(), pool.end());
  std::shuffle(picks.begin(), picks.end(), rng);
  for (std::size_t w = 0; w < entries.size(); ++w) {
    if (w < picks.size() && rng.chance(2, 3)) {
      entries[w].tag = picks[w].value;
      entries[w].level = static_cast<std::uint8_t>(1 + rng.below(m.cost.max_level));
    } else {
      entries[w] = CacheEntry{};
    }
  }
  s.partitionable.meta(idx) = rng();
}

/// Randomizes every cache set the observer cannot see while executing,
/// leaving its executing projection untouched.
inline MicroArchState perturb_invisible(MicroArchState s, DomainId observer,
                                        const DomainPolicy& policy, const Machine& m,
                                        const Universe& universe, std::uint64_t seed) {
  const auto visible = visible_set_indices(observer, policy, Role::Executing, m.geometry);
  Rng rng(hash_combine(seed, 0x7065727475726221ULL));
  const auto before = s.partitionable;
  std::optional<std::uint64_t> first_hidden;
  for (std::uint64_t idx = 0; idx < m.geometry.num_sets(); ++idx) {
    if (visible.contains(idx)) continue;
    if (!first_hidden) first_hidden = idx;
    randomize_set(s, idx, m, universe, rng);
  }
  if (first_hidden && s.partitionable == before) s.partitionable.meta(*first_hidden) ^= 1;
  return s;
}

}  // namespace tp
