#pragma once

// Randomized property suites over the cost model, the selector and the
// kernel. Shared by the unit tests, the acceptance binary and `tpsim check`.

#include <cstdint>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tp/generators.hpp"
#include "tp/kernel.hpp"
#include "tp/microarch.hpp"
#include "tp/selector.hpp"

namespace tp {

struct SuiteResult {
  std::string name;
  std::size_t cases = 0;
  std::size_t failures = 0;
  std::string first_failure;

  SuiteResult() = default;
  explicit SuiteResult(std::string n) : name(std::move(n)) {}

  bool ok() const { return failures == 0 && cases > 0; }
  void fail(const std::string& why) {
    if (failures++ == 0) first_failure = why;
  }
};

inline std::string format_suite(const SuiteResult& r) {
  std::ostringstream os;
  os << (r.ok() ? "PASS " : "FAIL ") << r.name << " cases=" << r.cases << " failures=" << r.failures;
  if (!r.first_failure.empty()) os << " first=" << r.first_failure;
  return os.str();
}

namespace detail {

inline PhysAddr random_line(const Universe& u, Rng& rng) { return u.lines()[rng.below(u.lines().size())]; }

inline TraceOp random_access(const Universe& u, Rng& rng) {
  const auto p = random_line(u, rng);
  if (rng.chance(1, 2)) return Read{VirtAddr{p.value}, p};
  return Write{VirtAddr{p.value}, p};
}

/// Copies the cache sets selected by `keep` from `from` into `to`.
template <typename Pred>
void copy_sets(MicroArchState& to, const MicroArchState& from, std::uint64_t num_sets, Pred keep) {
  for (std::uint64_t idx = 0; idx < num_sets; ++idx) {
    if (!keep(idx)) continue;
    auto src = from.partitionable.set(idx);
    std::copy(src.begin(), src.end(), to.partitionable.set(idx).begin());
    to.partitionable.meta(idx) = from.partitionable.meta(idx);
  }
}

inline Cycles delta_of(MicroArchState s, const TraceOp& op, std::uint64_t oracle_seed, const Machine& m) {
  NondetOracle o(oracle_seed);
  return apply_op_in_place(s, op, o, m);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Cost model

/// Access latency depends only on the cachedness of the collision set.
inline SuiteResult access_cost_locality(const Machine& m, const Universe& u, std::size_t cases, std::uint64_t seed) {
  SuiteResult r{"access-cost-locality"};
  Rng rng(seed);
  for (std::size_t i = 0; i < cases; ++i, ++r.cases) {
    const auto s1 = random_state(m, u, rng);
    auto s2 = random_state(m, u, rng);
    const auto op = detail::random_access(u, rng);
    const auto p = std::visit([](const auto& o) -> PhysAddr {
      if constexpr (requires { o.p; }) return o.p; else return PhysAddr{};
    }, op);
    const auto set = set_index_of(p, m.geometry);
    detail::copy_sets(s2, s1, m.geometry.num_sets(), [&](auto idx) { return idx == set; });
    const auto oseed = rng();
    const auto c1 = touch_cost(s1, p, m), c2 = touch_cost(s2, p, m);
    const auto d1 = detail::delta_of(s1, op, oseed, m), d2 = detail::delta_of(s2, op, oseed, m);
    if (c1 != c2 || d1 != d2)
      r.fail(format_op(op) + ": cost " + std::to_string(c1) + " vs " + std::to_string(c2));
    else if (c1 < m.cost.cost_min() || c1 > m.cost.cost_max())
      r.fail(format_op(op) + ": cost " + std::to_string(c1) + " outside [cost_min, cost_max]");
  }
  return r;
}

inline OffCoreFlush random_flush(const Machine& m, const Universe& u, Rng& rng) {
  OffCoreFlush f;
  if (rng.chance(1, 8)) {
    // Worst case: one target in every set.
    for (std::uint64_t s = 0; s < m.geometry.num_sets(); ++s)
      if (!u.lines_in_set(s).empty()) f.targets.push_back(u.lines_in_set(s).front());
    return f;
  }
  const auto n = 1 + rng.below(4);
  for (std::uint64_t k = 0; k < n; ++k) f.targets.push_back(detail::random_line(u, rng));
  return f;
}

/// Off-core flush latency depends only on the targets' colours.
inline SuiteResult offcore_flush_locality(const Machine& m, const Universe& u, std::size_t cases, std::uint64_t seed) {
  SuiteResult r{"offcore-flush-locality"};
  Rng rng(seed);
  const auto& g = m.geometry;
  for (std::size_t i = 0; i < cases; ++i, ++r.cases) {
    const auto s1 = random_state(m, u, rng);
    auto s2 = random_state(m, u, rng);
    const auto f = random_flush(m, u, rng);
    std::set<std::uint64_t> colours;
    for (auto t : f.targets) colours.insert(colour_of(t, g));
    detail::copy_sets(s2, s1, g.num_sets(), [&](auto idx) { return colours.contains(colour_of_set(idx, g)); });
    const auto oseed = rng();
    const auto d1 = detail::delta_of(s1, f, oseed, m), d2 = detail::delta_of(s2, f, oseed, m);
    if (d1 != d2) r.fail(format_op(f) + ": " + std::to_string(d1) + " vs " + std::to_string(d2));
  }
  return r;
}

/// On-core flush latency depends only on the flushable state.
inline SuiteResult oncore_flush_locality(const Machine& m, const Universe& u, std::size_t cases, std::uint64_t seed) {
  SuiteResult r{"oncore-flush-locality"};
  Rng rng(seed);
  for (std::size_t i = 0; i < cases; ++i, ++r.cases) {
    const auto s1 = random_state(m, u, rng);
    auto s2 = random_state(m, u, rng);
    s2.flushable = s1.flushable;
    const auto oseed = rng();
    const auto d1 = detail::delta_of(s1, OnCoreFlush{}, oseed, m);
    const auto d2 = detail::delta_of(s2, OnCoreFlush{}, oseed, m);
    if (d1 != d2) r.fail("ONFLUSH: " + std::to_string(d1) + " vs " + std::to_string(d2));
  }
  return r;
}

/// Flush and access latencies never exceed their configured bounds.
inline SuiteResult wcet_bounds(const Machine& m, const Universe& u, std::size_t cases, std::uint64_t seed) {
  SuiteResult r{"wcet-bounds"};
  Rng rng(seed);
  for (std::size_t i = 0; i < cases; ++i, ++r.cases) {
    const auto s = random_state(m, u, rng);
    const auto oseed = rng();
    const auto on = detail::delta_of(s, OnCoreFlush{}, oseed, m);
    const auto f = random_flush(m, u, rng);
    const auto off = detail::delta_of(s, f, oseed, m);
    const auto op = detail::random_access(u, rng);
    const auto acc = detail::delta_of(s, op, oseed, m);
    if (on > m.cost.oncore_flush_wcet) r.fail("ONFLUSH took " + std::to_string(on));
    else if (off > m.cost.offcore_flush_wcet) r.fail("OFFFLUSH took " + std::to_string(off));
    else if (acc > m.cost.access_wcet()) r.fail(format_op(op) + " took " + std::to_string(acc));
  }
  return r;
}

/// A Read/Write changes only its own cache set.
inline SuiteResult colour_confinement(const Machine& m, const Universe& u, std::size_t cases, std::uint64_t seed) {
  SuiteResult r{"colour-confinement"};
  Rng rng(seed);
  for (std::size_t i = 0; i < cases; ++i, ++r.cases) {
    auto s = random_state(m, u, rng);
    const auto before = s;
    const auto op = detail::random_access(u, rng);
    NondetOracle o(rng());
    apply_op_in_place(s, op, o, m);
    const auto p = std::visit([](const auto& x) -> PhysAddr {
      if constexpr (requires { x.p; }) return x.p; else return PhysAddr{};
    }, op);
    const auto own = set_index_of(p, m.geometry);
    for (std::uint64_t idx = 0; idx < m.geometry.num_sets(); ++idx) {
      if (idx == own) continue;
      const auto a = before.partitionable.set(idx);
      const auto b = std::as_const(s).partitionable.set(idx);
      if (!std::equal(a.begin(), a.end(), b.begin()) || before.partitionable.meta(idx) != s.partitionable.meta(idx)) {
        r.fail(format_op(op) + " changed set " + std::to_string(idx));
        break;
      }
    }
  }
  return r;
}

/// No operation moves the clock backwards; equal inputs give equal results.
inline SuiteResult clock_and_determinism(const Machine& m, const Universe& u, std::size_t cases, std::uint64_t seed) {
  SuiteResult r{"clock-monotonicity-and-oracle-determinism"};
  Rng rng(seed);
  for (std::size_t i = 0; i < cases; ++i, ++r.cases) {
    const auto s = random_state(m, u, rng);
    TraceOp op;
    switch (rng.below(4)) {
      case 0: op = detail::random_access(u, rng); break;
      case 1: op = OnCoreFlush{}; break;
      case 2: op = random_flush(m, u, rng); break;
      default: op = PadTo{s.clock + rng.below(1000)}; break;
    }
    const auto oseed = rng();
    NondetOracle o1(oseed), o2(oseed);
    const auto a = apply_op(s, op, o1, m);
    const auto b = apply_op(s, op, o2, m);
    if (a.clock < s.clock) r.fail(format_op(op) + " moved the clock backwards");
    else if (!(a == b) || !(o1 == o2)) r.fail(format_op(op) + " is not a function of state and oracle");
  }
  return r;
}

// ---------------------------------------------------------------------------
// Selector

namespace detail {

inline TASet random_domain_ta(const DomainPolicy& policy, DomainId d, const CacheGeometry& g, Rng& rng) {
  TASet ta(g.page_size());
  const auto& spec = policy.domain(d);
  for (const auto& m : spec.user_region)
    if (rng.chance(1, 2)) ta.insert(m.va);
  for (auto p : spec.kernel_image_pages(g.page_size()))
    if (rng.chance(1, 3)) ta.insert(p);
  if (ta.empty() && !spec.user_region.empty()) ta.insert(spec.user_region.front().va);
  return ta;
}

}  // namespace detail

/// States with equal visible projections for the executing domain yield the
/// same selected trace. Uses cfg.selector, so a peeking selector fails.
inline SuiteResult selector_dependency(const KernelConfig& cfg, std::size_t cases, std::uint64_t seed) {
  SuiteResult r{std::string("selector-dependency") + (cfg.selector == SelectorMode::Peek ? "[peek]" : "")};
  Rng rng(seed);
  const auto& g = cfg.geometry();
  const auto map = build_address_map(cfg.policy, g);
  for (std::size_t i = 0; i < cases; ++i, ++r.cases) {
    const DomainId d{static_cast<std::uint32_t>(rng.below(cfg.policy.domains.size()))};
    const auto s1 = random_state(cfg.machine, cfg.universe, rng);
    const auto s2 = perturb_invisible(s1, d, cfg.policy, cfg.machine, cfg.universe, rng());
    const auto ta = detail::random_domain_ta(cfg.policy, d, g, rng);
    const auto sel_seed = rng();
    const auto v1 = visible_projection(s1, d, cfg.policy, Role::Executing, g);
    const auto v2 = visible_projection(s2, d, cfg.policy, Role::Executing, g);
    if (v1 != v2) {
      r.fail("perturb_invisible changed the visible projection");
      continue;
    }
    Trace t1, t2;
    if (cfg.selector == SelectorMode::Peek) {
      t1 = select_trace_peeking(ta, s1, map, g, cfg.trace_budget, sel_seed);
      t2 = select_trace_peeking(ta, s2, map, g, cfg.trace_budget, sel_seed);
    } else {
      t1 = select_trace(ta, v1, map, g, cfg.trace_budget, sel_seed);
      t2 = select_trace(ta, v2, map, g, cfg.trace_budget, sel_seed);
    }
    if (t1 != t2) r.fail("case " + std::to_string(i) + ": traces differ for domain " + std::to_string(d.value));
  }
  return r;
}

/// Every selected trace adheres to its TA set and respects the budget, also
/// with flush and pad interleaving enabled.
inline SuiteResult selector_adherence(const KernelConfig& cfg, std::size_t cases, std::uint64_t seed) {
  SuiteResult r{"selector-adherence"};
  Rng rng(seed);
  const auto& g = cfg.geometry();
  const auto map = build_address_map(cfg.policy, g);
  for (std::size_t i = 0; i < cases; ++i, ++r.cases) {
    TASet ta(g.page_size());
    for (const auto& [v, p] : map.entries())
      if (rng.chance(1, 4)) ta.insert(VirtAddr{v});
    if (rng.chance(1, 8)) ta.insert(VirtAddr{0x7fff'0000});  // unmapped pages are skipped
    const auto s = random_state(cfg.machine, cfg.universe, rng);
    const DomainId d{static_cast<std::uint32_t>(rng.below(cfg.policy.domains.size()))};
    const auto budget = 1 + rng.below(cfg.trace_budget);
    const SelectorOptions opts{rng.chance(1, 2), rng.chance(1, 2)};
    const auto t = select_trace(ta, visible_projection(s, d, cfg.policy, Role::Executing, g), map, g, budget, rng(), opts);
    if (t.size() > budget) r.fail("trace longer than budget");
    else if (auto a = adheres(t, ta, map); !a) r.fail("op " + std::to_string(a.first_offender) + " does not adhere: " + format_op(t[a.first_offender]));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Kernel

/// Benign full-system runs: no failures anywhere, the partition invariant at
/// every step, adherent traces, TA monotone within steps and emptied only by
/// the mechanism, exact mechanism sequence with its postconditions.
inline SuiteResult benign_runs(const Scenario& sc, std::size_t runs, std::uint64_t seed) {
  SuiteResult r{"benign-run-invariants"};
  const auto& cfg = sc.kernel;
  const auto& g = cfg.geometry();
  const auto counts = object_counts(sc.objects, cfg.policy.domains.size());
  for (std::size_t run = 0; run < runs; ++run) {
    const auto rseed = hash_combine(seed, run);
    auto sched = random_schedule(cfg, counts, sc.slices, sc.max_inputs, rseed);
    Runner runner(cfg, boot(cfg, sc.objects), std::move(sched), NondetOracle(rseed), rseed, true);
    std::size_t switches = 0;
    while (!runner.done()) {
      const auto rec = runner.advance();
      ++r.cases;
      const auto where = "run " + std::to_string(run) + " slice " + std::to_string(rec.slice) + " " + rec.label;
      if (rec.failed()) {
        r.fail(where + ": " + to_string(rec.failures.front().kind) + " " + rec.failures.front().detail);
        continue;
      }
      if (!partition_subset_invariant(runner.system().abs, cfg.policy, g)) r.fail(where + ": invariant");
      else if (!record_adheres(rec, runner.system().abs.map, cfg.policy)) r.fail(where + ": trace does not adhere");
      else if (rec.kind != RecordKind::DomainSwitch && !rec.ta_after.includes(rec.ta_before)) r.fail(where + ": TA shrank");
      else if (rec.kind == RecordKind::DomainSwitch) {
        ++switches;
        const auto& phases = rec.phases;
        const auto mech = std::find_if(phases.begin(), phases.end(), [](const auto& p) { return p.name == "mechanism"; });
        if (!mechanism_exact(rec, cfg.policy)) r.fail(where + ": mechanism sequence differs");
        else if (mech == phases.end() || !mech->ta_after.empty()) r.fail(where + ": TA not emptied by the mechanism");
        else if (mech->clock_after != rec.deadline) r.fail(where + ": clock not at deadline");
      }
    }
    if (switches != sc.slices) r.fail("run " + std::to_string(run) + ": " + std::to_string(switches) + " switches");
  }
  return r;
}

struct FuzzStats {
  std::size_t accesses = 0;
  std::size_t ta_violations = 0;
  std::size_t records = 0;
};

/// Random syscall sequences including crafted cross-domain and raw accesses:
/// every access is either tracked or reported as a TA violation naming its
/// address, and every record's trace adheres to its TA set.
inline SuiteResult ta_fuzz(const Scenario& sc, std::size_t sequences, std::uint64_t seed, FuzzStats* stats = nullptr) {
  SuiteResult r{"ta-no-fail-fuzz"};
  const auto& cfg = sc.kernel;
  const auto counts = object_counts(sc.objects, cfg.policy.domains.size());
  FuzzStats st;
  for (std::size_t i = 0; i < sequences; ++i, ++r.cases) {
    const auto sseed = hash_combine(seed, i);
    const std::size_t slices = cfg.policy.domains.size();
    auto sched = random_schedule(cfg, counts, slices, 3, sseed, InputMix{true});
    Runner runner(cfg, boot(cfg, sc.objects), std::move(sched), NondetOracle(sseed), sseed, true);
    while (!runner.done()) {
      const auto rec = runner.advance();
      ++st.records;
      if (!record_adheres(rec, runner.system().abs.map, cfg.policy)) {
        r.fail("sequence " + std::to_string(i) + ": " + rec.label + " trace does not adhere");
        break;
      }
      for (const auto& a : rec.accesses) {
        ++st.accesses;
        if (rec.ta_after.contains(a.v) && a.tracked) continue;
        bool reported = false;
        for (const auto& f : rec.failures)
          if (f.kind == FailureKind::TaViolation && !f.witnesses.empty() && f.witnesses.front() == a.v) reported = true;
        if (a.tracked || !reported) {
          r.fail("sequence " + std::to_string(i) + ": silent untracked access to " + hex(a.v.value));
          break;
        }
        ++st.ta_violations;
      }
    }
  }
  if (stats) *stats = st;
  return r;
}

inline std::vector<SuiteResult> property_suites(const KernelConfig& cfg, std::size_t cases, std::uint64_t seed) {
  const auto& m = cfg.machine;
  const auto& u = cfg.universe;
  return {access_cost_locality(m, u, cases, hash_combine(seed, 1)),
          offcore_flush_locality(m, u, cases, hash_combine(seed, 2)),
          oncore_flush_locality(m, u, cases, hash_combine(seed, 3)),
          wcet_bounds(m, u, cases, hash_combine(seed, 4)),
          colour_confinement(m, u, cases, hash_combine(seed, 5)),
          clock_and_determinism(m, u, cases, hash_combine(seed, 6)),
          selector_dependency(cfg, cases, hash_combine(seed, 7)),
          selector_adherence(cfg, cases, hash_combine(seed, 8))};
}

inline std::vector<SuiteResult> invariant_suites(const Scenario& sc, std::size_t runs, std::size_t fuzz,
                                                 std::uint64_t seed) {
  return {benign_runs(sc, runs, hash_combine(seed, 9)), ta_fuzz(sc, fuzz, hash_combine(seed, 10))};
}

}  // namespace tp
