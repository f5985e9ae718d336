#pragma once

// Microarchitectural state (flushable words, coloured off-core cache, clock),
// the five hardware-interaction operations and their timing model.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "tp/address.hpp"
#include "tp/oracle.hpp"
#include "tp/policy.hpp"

namespace tp {

enum class Replacement {
  Plru,        // tree pseudo-LRU, one bit per internal node
  Adversarial  // insertion-order pointer that hits never move; see replacement_insert
};

inline const char* to_string(Replacement r) {
  return r == Replacement::Plru ? "plru" : "adversarial";
}

struct CostModel {
  std::size_t flushable_words = 8;
  std::uint32_t max_level = 3;
  std::vector<Cycles> hit_cost{2, 6, 14};  // indexed by cachedness level - 1
  Cycles miss_cost = 30;
  Cycles miss_evict_cost = 40;
  Cycles jitter_max = 2;
  Cycles oncore_flush_base = 30;
  Cycles oncore_flush_per_bit = 1;
  Cycles oncore_flush_wcet = 100;
  Cycles offcore_flush_base = 20;
  Cycles offcore_flush_per_line = 2;
  Cycles offcore_flush_wcet = 600;
  Replacement replacement = Replacement::Plru;

  Cycles cost_min() const { return hit_cost.empty() ? miss_cost : hit_cost.front(); }
  Cycles cost_max() const { return miss_evict_cost; }
  Cycles access_wcet() const { return cost_max() + jitter_max; }
};

/// The pair of immutable parameters every microarchitectural operation needs.
struct Machine {
  CacheGeometry geometry;
  CostModel cost;
};

/// Checks cost-model consistency, including that the flush WCETs really bound
/// the cost formulas. Throws ConfigError.
inline void validate_machine(const Machine& m) {
  const auto& c = m.cost;
  const auto& g = m.geometry;
  if (c.flushable_words == 0) throw ConfigError("cost_model.flushable_words", "must be positive");
  if (c.max_level == 0 || c.max_level > 255) throw ConfigError("cost_model.max_level", "must be in 1..255");
  if (c.hit_cost.size() != c.max_level)
    throw ConfigError("cost_model.hit_cost", "needs exactly max_level entries");
  for (std::size_t i = 1; i < c.hit_cost.size(); ++i)
    if (c.hit_cost[i] < c.hit_cost[i - 1])
      throw ConfigError("cost_model.hit_cost", "must be non-decreasing with level");
  if (c.miss_cost < c.hit_cost.back())
    throw ConfigError("cost_model.miss_cost", "must not be cheaper than the slowest hit");
  if (c.miss_evict_cost < c.miss_cost)
    throw ConfigError("cost_model.miss_evict_cost", "must not be cheaper than a plain miss");
  if (c.oncore_flush_base + 64 * c.oncore_flush_per_bit + c.jitter_max > c.oncore_flush_wcet)
    throw ConfigError("cost_model.oncore_flush_wcet", "below the on-core flush cost bound");
  if (c.offcore_flush_base + c.offcore_flush_per_line * g.num_sets() * g.num_ways() + c.jitter_max >
      c.offcore_flush_wcet)
    throw ConfigError("cost_model.offcore_flush_wcet", "below the off-core flush cost bound");
  if (c.replacement == Replacement::Plru && !std::has_single_bit(g.num_ways()))
    throw ConfigError("cost_model.replacement", "plru needs a power-of-two number of ways");
}

struct FlushableState {
  std::vector<std::uint64_t> words;

  static FlushableState reset(std::size_t n) { return FlushableState{std::vector<std::uint64_t>(n, 0)}; }
  bool is_reset() const {
    return std::all_of(words.begin(), words.end(), [](auto w) { return w == 0; });
  }
  bool operator==(const FlushableState&) const = default;
};

/// One way of a cache set. level 0 means not resident; level k > 0 means
/// resident at hierarchy level k (lower is faster).
struct CacheEntry {
  std::uint64_t tag = 0;  // line-aligned physical address
  std::uint8_t level = 0;

  bool resident() const { return level != 0; }
  bool operator==(const CacheEntry&) const = default;
};

class PartitionableState {
 public:
  PartitionableState() = default;
  PartitionableState(std::uint64_t num_sets, std::uint64_t num_ways)
      : ways_(num_ways), entries_(num_sets * num_ways), meta_(num_sets, 0) {}

  std::uint64_t num_sets() const { return meta_.size(); }
  std::uint64_t num_ways() const { return ways_; }

  std::span<CacheEntry> set(std::uint64_t s) { return {entries_.data() + s * ways_, ways_}; }
  std::span<const CacheEntry> set(std::uint64_t s) const {
    return {entries_.data() + s * ways_, ways_};
  }
  std::uint64_t& meta(std::uint64_t s) { return meta_[s]; }
  std::uint64_t meta(std::uint64_t s) const { return meta_[s]; }

  /// Cachedness level of the line holding p (0 when absent).
  std::uint8_t cachedness(PhysAddr p, const CacheGeometry& g) const {
    const auto line = g.line_base(p.value);
    for (const auto& e : set(set_index_of(p, g)))
      if (e.resident() && e.tag == line) return e.level;
    return 0;
  }
  bool resident(PhysAddr p, const CacheGeometry& g) const { return cachedness(p, g) != 0; }

  bool set_is_reset(std::uint64_t s) const {
    auto entries = set(s);
    return meta_[s] == 0 &&
           std::none_of(entries.begin(), entries.end(), [](const auto& e) { return e.resident(); });
  }

  bool operator==(const PartitionableState&) const = default;

 private:
  std::uint64_t ways_ = 0;
  std::vector<CacheEntry> entries_;
  std::vector<std::uint64_t> meta_;
};

struct MicroArchState {
  FlushableState flushable;
  PartitionableState partitionable;
  Cycles clock = 0;

  static MicroArchState initial(const Machine& m) {
    return MicroArchState{FlushableState::reset(m.cost.flushable_words),
                          PartitionableState(m.geometry.num_sets(), m.geometry.num_ways()), 0};
  }
  bool operator==(const MicroArchState&) const = default;
};

// ---------------------------------------------------------------------------
// Trace operations

struct Read {
  VirtAddr v;
  PhysAddr p;
  bool operator==(const Read&) const = default;
};
struct Write {
  VirtAddr v;
  PhysAddr p;
  bool operator==(const Write&) const = default;
};
struct OnCoreFlush {
  bool operator==(const OnCoreFlush&) const = default;
};
struct OffCoreFlush {
  std::vector<PhysAddr> targets;
  bool operator==(const OffCoreFlush&) const = default;
};
struct PadTo {
  Cycles t = 0;
  bool operator==(const PadTo&) const = default;
};

using TraceOp = std::variant<Read, Write, OnCoreFlush, OffCoreFlush, PadTo>;
using Trace = std::vector<TraceOp>;

class PadViolation : public std::runtime_error {
 public:
  PadViolation(Cycles now_, Cycles target_, std::size_t index_ = 0)
      : std::runtime_error("pad target " + std::to_string(target_) + " is before now " +
                           std::to_string(now_)),
        now(now_),
        target(target_),
        index(index_) {}
  Cycles now;
  Cycles target;
  std::size_t index;  // position in the trace, set by apply_trace
};

// ---------------------------------------------------------------------------
// Replacement policies

namespace detail {

inline std::uint64_t plru_victim(std::uint64_t meta, std::uint64_t ways) {
  std::uint64_t node = 1;
  while (node < ways) node = 2 * node + ((meta >> node) & 1);
  return node - ways;
}

inline void plru_touch(std::uint64_t& meta, std::uint64_t way, std::uint64_t ways) {
  // Walk up from the leaf, pointing every ancestor at the other subtree.
  std::uint64_t node = way + ways;
  while (node > 1) {
    const std::uint64_t parent = node / 2;
    const bool came_from_right = node & 1;
    if (came_from_right)
      meta &= ~(1ULL << parent);
    else
      meta |= (1ULL << parent);
    node = parent;
  }
}

}  // namespace detail

inline void replacement_hit(std::uint64_t& meta, std::uint64_t way, std::uint64_t ways,
                            Replacement r) {
  if (r == Replacement::Plru) detail::plru_touch(meta, way, ways);
}

// Adversarial mode keeps a round-robin pointer over the ways that only
// insertions advance. Touching a resident line leaves the metadata as it was,
// so a sweep over lines that are already cached cannot undo the insertion
// history another domain left behind.
inline void replacement_insert(std::uint64_t& meta, std::uint64_t way, std::uint64_t ways,
                               Replacement r) {
  if (r == Replacement::Plru)
    detail::plru_touch(meta, way, ways);
  else if (way == meta % ways)
    meta = (meta + 1) % ways;
}

/// Chooses a way for a new line in a set with no free way.
inline std::uint64_t replacement_victim(std::uint64_t& meta, std::uint64_t ways, Replacement r) {
  if (r == Replacement::Plru) return detail::plru_victim(meta, ways);
  return meta % ways;
}

// ---------------------------------------------------------------------------
// Costs

/// Latency of touching p: a function of p's own cachedness and of whether its
/// cache set has a free way, i.e. of cachedness within its collision set only.
inline Cycles touch_cost(const MicroArchState& s, PhysAddr p, const Machine& m) {
  const auto& g = m.geometry;
  const auto line = g.line_base(p.value);
  bool has_free_way = false;
  for (const auto& e : s.partitionable.set(set_index_of(p, g))) {
    if (e.resident() && e.tag == line) return m.cost.hit_cost.at(e.level - 1);
    if (!e.resident()) has_free_way = true;
  }
  return has_free_way ? m.cost.miss_cost : m.cost.miss_evict_cost;
}

inline Cycles oncore_flush_cost(const FlushableState& f, const CostModel& c) {
  std::uint64_t fold = 0;
  for (auto w : f.words) fold ^= w;
  return c.oncore_flush_base + c.oncore_flush_per_bit * static_cast<Cycles>(std::popcount(fold));
}

/// Distinct cache sets touched by an off-core flush of `targets`, ascending.
inline std::vector<std::uint64_t> flushed_sets(const std::vector<PhysAddr>& targets,
                                               const CacheGeometry& g) {
  std::vector<std::uint64_t> sets;
  for (auto t : targets) sets.push_back(set_index_of(t, g));
  std::sort(sets.begin(), sets.end());
  sets.erase(std::unique(sets.begin(), sets.end()), sets.end());
  return sets;
}

// ---------------------------------------------------------------------------
// Semantics

namespace detail {

inline void access(MicroArchState& s, PhysAddr p, std::uint64_t kind, NondetOracle& oracle,
                   const Machine& m) {
  const auto& g = m.geometry;
  const Cycles cost = touch_cost(s, p, m);
  const std::uint64_t mix_word = oracle.next();
  const std::uint64_t jitter_word = oracle.next();

  const auto set_idx = set_index_of(p, g);
  const auto line = g.line_base(p.value);
  auto entries = s.partitionable.set(set_idx);
  auto& meta = s.partitionable.meta(set_idx);
  const auto ways = g.num_ways();
  const auto max_level = static_cast<std::uint8_t>(m.cost.max_level);

  std::uint64_t way = ways;
  for (std::uint64_t w = 0; w < ways; ++w)
    if (entries[w].resident() && entries[w].tag == line) way = w;
  if (way != ways) {
    replacement_hit(meta, way, ways, m.cost.replacement);
  } else {
    for (std::uint64_t w = 0; w < ways && way == ways; ++w)
      if (!entries[w].resident()) way = w;
    if (way == ways) way = replacement_victim(meta, ways, m.cost.replacement);
    entries[way].tag = line;
    replacement_insert(meta, way, ways, m.cost.replacement);
  }
  for (std::uint64_t w = 0; w < ways; ++w)
    if (w != way && entries[w].resident())
      entries[w].level = std::min<std::uint8_t>(entries[w].level + 1, max_level);
  entries[way].level = 1;

  auto& words = s.flushable.words;
  for (std::size_t i = 0; i < words.size(); ++i)
    words[i] = hash_combine(words[i] ^ line, mix_word + 2 * i + kind);

  s.clock += cost + jitter_word % (m.cost.jitter_max + 1);
}

}  // namespace detail

/// Applies one operation in place and returns the clock delta.
inline Cycles apply_op_in_place(MicroArchState& s, const TraceOp& op, NondetOracle& oracle,
                                const Machine& m) {
  const Cycles before = s.clock;
  std::visit(
      [&](const auto& o) {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, Read>) {
          detail::access(s, o.p, 0, oracle, m);
        } else if constexpr (std::is_same_v<T, Write>) {
          detail::access(s, o.p, 1, oracle, m);
        } else if constexpr (std::is_same_v<T, OnCoreFlush>) {
          const Cycles cost = oncore_flush_cost(s.flushable, m.cost);
          const std::uint64_t jitter = oracle.next() % (m.cost.jitter_max + 1);
          std::fill(s.flushable.words.begin(), s.flushable.words.end(), 0);
          s.clock += cost + jitter;
        } else if constexpr (std::is_same_v<T, OffCoreFlush>) {
          Cycles cost = m.cost.offcore_flush_base;
          for (auto set_idx : flushed_sets(o.targets, m.geometry)) {
            for (auto& e : s.partitionable.set(set_idx)) {
              if (e.resident()) cost += m.cost.offcore_flush_per_line;
              e = CacheEntry{};
            }
            s.partitionable.meta(set_idx) = 0;
          }
          s.clock += cost + oracle.next() % (m.cost.jitter_max + 1);
        } else {
          if (o.t < s.clock) throw PadViolation(s.clock, o.t);
          s.clock = o.t;
        }
      },
      op);
  return s.clock - before;
}

inline MicroArchState apply_op(MicroArchState s, const TraceOp& op, NondetOracle& oracle,
                               const Machine& m) {
  apply_op_in_place(s, op, oracle, m);
  return s;
}

/// Left fold of apply_op. A PadViolation carries the index of the failing op;
/// `s` then holds the state just before that op.
inline void apply_trace_in_place(MicroArchState& s, const Trace& trace, NondetOracle& oracle,
                                 const Machine& m) {
  for (std::size_t i = 0; i < trace.size(); ++i) {
    try {
      apply_op_in_place(s, trace[i], oracle, m);
    } catch (const PadViolation& e) {
      throw PadViolation(e.now, e.target, i);
    }
  }
}

inline MicroArchState apply_trace(MicroArchState s, const Trace& trace, NondetOracle& oracle,
                                  const Machine& m) {
  apply_trace_in_place(s, trace, oracle, m);
  return s;
}

// ---------------------------------------------------------------------------
// Observation

enum class Role { Executing, Suspended };

struct VisibleSet {
  std::uint64_t index = 0;
  std::vector<CacheEntry> entries;
  std::uint64_t meta = 0;
  bool operator==(const VisibleSet&) const = default;
};

struct VisibleProjection {
  std::optional<FlushableState> flushable;  // executing observers only
  std::vector<VisibleSet> sets;
  std::optional<Cycles> clock;  // executing observers only

  bool operator==(const VisibleProjection&) const = default;
};

/// Indices of the cache sets `observer` can see in the given role.
inline std::set<std::uint64_t> visible_set_indices(DomainId observer, const DomainPolicy& policy,
                                                   Role role, const CacheGeometry& g) {
  auto own = policy.colour_sets(observer, g);
  const auto globals = policy.global_sets(g);
  if (role == Role::Executing) {
    own.insert(globals.begin(), globals.end());
  } else {
    for (auto s : globals) own.erase(s);
  }
  return own;
}

/// The part of `s` observable by `observer`. Throws std::out_of_range for a
/// domain the policy does not know.
inline VisibleProjection visible_projection(const MicroArchState& s, DomainId observer,
                                            const DomainPolicy& policy, Role role,
                                            const CacheGeometry& g) {
  if (!policy.has(observer))
    throw std::out_of_range("unknown observer domain " + std::to_string(observer.value));
  VisibleProjection out;
  if (role == Role::Executing) {
    out.flushable = s.flushable;
    out.clock = s.clock;
  }
  for (auto idx : visible_set_indices(observer, policy, role, g)) {
    auto entries = s.partitionable.set(idx);
    out.sets.push_back(VisibleSet{idx, {entries.begin(), entries.end()}, s.partitionable.meta(idx)});
  }
  return out;
}

/// Names the first field where two projections differ, or nullopt.
inline std::optional<std::string> first_difference(const VisibleProjection& a,
                                                   const VisibleProjection& b) {
  if (a.flushable != b.flushable) return std::string("flushable");
  if (a.clock != b.clock) return std::string("clock");
  if (a.sets.size() != b.sets.size()) return std::string("sets");
  for (std::size_t i = 0; i < a.sets.size(); ++i)
    if (a.sets[i] != b.sets[i]) return "set[" + std::to_string(a.sets[i].index) + "]";
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Adherence

struct Adherence {
  bool ok = true;
  std::size_t first_offender = 0;
  explicit operator bool() const { return ok; }
};

/// A trace adheres when every Read/Write uses a tracked virtual address with
/// its true translation (kernel globals are exempt from tracking) and every
/// off-core flush target is a translation of a tracked address or a global.
inline Adherence adheres(const Trace& trace, const TASet& ta, const AddressMap& map,
                         const std::vector<PhysAddr>& kernel_globals = {}) {
  auto is_global = [&](PhysAddr p) {
    return std::find(kernel_globals.begin(), kernel_globals.end(), p) != kernel_globals.end();
  };
  auto access_ok = [&](VirtAddr v, PhysAddr p) {
    if (!map.is_mapped(v) || map.translate(v) != p) return false;
    return ta.contains(v) || is_global(p);
  };
  auto flush_target_ok = [&](PhysAddr p) {
    if (is_global(p)) return true;
    for (auto vpage : ta.pages()) {
      if (!map.is_mapped(VirtAddr{vpage})) continue;
      auto ppage = map.translate(VirtAddr{vpage});
      if (p.value >= ppage.value && p.value < ppage.value + ta.page_size()) return true;
    }
    return false;
  };
  for (std::size_t i = 0; i < trace.size(); ++i) {
    bool ok = std::visit(
        [&](const auto& o) {
          using T = std::decay_t<decltype(o)>;
          if constexpr (std::is_same_v<T, Read> || std::is_same_v<T, Write>) {
            return access_ok(o.v, o.p);
          } else if constexpr (std::is_same_v<T, OffCoreFlush>) {
            return std::all_of(o.targets.begin(), o.targets.end(), flush_target_ok);
          } else {
            return true;
          }
        },
        trace[i]);
    if (!ok) return Adherence{false, i};
  }
  return Adherence{};
}

// ---------------------------------------------------------------------------
// Trace dump format: one op per line.
//   READ v p | WRITE v p | ONFLUSH | OFFFLUSH p1,p2,... | PAD t

inline std::string format_op(const TraceOp& op) {
  return std::visit(
      [](const auto& o) -> std::string {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, Read>) {
          return "READ " + hex(o.v.value) + " " + hex(o.p.value);
        } else if constexpr (std::is_same_v<T, Write>) {
          return "WRITE " + hex(o.v.value) + " " + hex(o.p.value);
        } else if constexpr (std::is_same_v<T, OnCoreFlush>) {
          return "ONFLUSH";
        } else if constexpr (std::is_same_v<T, OffCoreFlush>) {
          std::string s = "OFFFLUSH ";
          for (std::size_t i = 0; i < o.targets.size(); ++i) {
            if (i) s += ',';
            s += hex(o.targets[i].value);
          }
          return s;
        } else {
          return "PAD " + std::to_string(o.t);
        }
      },
      op);
}

inline std::string format_trace(const Trace& trace) {
  std::string out;
  for (const auto& op : trace) out += format_op(op) + "\n";
  return out;
}

inline TraceOp parse_op(const std::string& line) {
  std::istringstream in(line);
  std::string kind;
  in >> kind;
  auto fail = [&] { return std::invalid_argument("malformed trace line '" + line + "'"); };
  if (kind == "READ" || kind == "WRITE") {
    std::string v, p, extra;
    if (!(in >> v >> p) || (in >> extra)) throw fail();
    VirtAddr va{parse_address(v)};
    PhysAddr pa{parse_address(p)};
    if (kind == "READ") return Read{va, pa};
    return Write{va, pa};
  }
  if (kind == "ONFLUSH") return OnCoreFlush{};
  if (kind == "OFFFLUSH") {
    std::string list;
    in >> list;
    OffCoreFlush f;
    std::istringstream items(list);
    for (std::string item; std::getline(items, item, ',');) f.targets.push_back(PhysAddr{parse_address(item)});
    return f;
  }
  if (kind == "PAD") {
    std::string t;
    if (!(in >> t)) throw fail();
    std::size_t used = 0;
    Cycles value = std::stoull(t, &used, 10);
    if (used != t.size()) throw fail();
    return PadTo{value};
  }
  throw fail();
}

inline Trace parse_trace(const std::string& text) {
  Trace out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.push_back(parse_op(line));
  return out;
}

}  // namespace tp
