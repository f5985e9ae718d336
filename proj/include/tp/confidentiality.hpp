#pragma once

// Two-run noninterference checker. Both runs share the observer's inputs,
// payloads and oracle lanes; the other (High) domains get independent
// secrets. Low views are compared at every point where the runs line up.

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "tp/generators.hpp"
#include "tp/kernel.hpp"
#include "tp/microarch.hpp"

namespace tp {

enum class Variant { U, UMu };

inline const char* to_string(Variant v) { return v == Variant::U ? "u" : "u-mu"; }

enum class Mutation { None, NoOncoreFlush, NoOffcoreGlobalFlush, NoPad, BadColouring, TaLeak, SelectorPeek };

inline const char* to_string(Mutation m) {
  switch (m) {
    case Mutation::None: return "none";
    case Mutation::NoOncoreFlush: return "no-oncore-flush";
    case Mutation::NoOffcoreGlobalFlush: return "no-offcore-global-flush";
    case Mutation::NoPad: return "no-pad";
    case Mutation::BadColouring: return "bad-colouring";
    case Mutation::TaLeak: return "ta-leak";
    case Mutation::SelectorPeek: return "selector-peek";
  }
  return "?";
}

/// The planted faults the checker must catch.
inline std::vector<Mutation> mutations() {
  return {Mutation::NoOncoreFlush, Mutation::NoOffcoreGlobalFlush, Mutation::NoPad,
          Mutation::BadColouring,  Mutation::TaLeak,               Mutation::SelectorPeek};
}

inline std::optional<Mutation> parse_mutation(const std::string& name) {
  if (name == "none") return Mutation::None;
  for (auto m : mutations())
    if (name == to_string(m)) return m;
  return std::nullopt;
}

inline std::optional<DomainId> first_high(const DomainPolicy& policy, DomainId observer) {
  for (std::uint32_t d = 0; d < policy.domains.size(); ++d)
    if (DomainId{d} != observer) return DomainId{d};
  return std::nullopt;
}

/// Applies a mutation to a scenario. Mutations that need a High domain are
/// no-ops in a single-domain scenario.
inline Scenario apply_mutation(Scenario sc, Mutation m, DomainId observer) {
  auto& k = sc.kernel;
  const auto high = first_high(k.policy, observer);
  switch (m) {
    case Mutation::None: break;
    case Mutation::NoOncoreFlush: k.mechanism.oncore_flush = false; break;
    case Mutation::NoOffcoreGlobalFlush: k.mechanism.offcore_global_flush = false; break;
    case Mutation::NoPad: k.mechanism.pad = false; break;
    case Mutation::SelectorPeek: k.selector = SelectorMode::Peek; break;
    case Mutation::TaLeak:
      if (high) k.leak = LeakPlant{*high, observer};
      break;
    case Mutation::BadColouring: {
      if (!high) break;
      const auto& g = k.geometry();
      auto& hspec = k.policy.domains.at(high->value);
      const auto& lspec = k.policy.domain(observer);
      if (hspec.user_region.empty() || lspec.colours.empty()) break;
      std::set<std::uint64_t> used;
      for (const auto& d : k.policy.domains) {
        for (const auto& mp : d.user_region) used.insert(mp.pa.value);
        for (auto p : d.kernel_image) used.insert(p.value);
      }
      for (auto gl : k.policy.kernel_globals) used.insert(g.page_base(gl.value));
      std::optional<PhysAddr> spare;
      for (auto page : k.universe.pages())
        if (!used.contains(page.value) && lspec.colours.contains(colour_of(page, g))) {
          spare = page;
          break;
        }
      if (!spare) throw ConfigError("policy", "bad-colouring needs a spare page of the observer's colour");
      hspec.colours.insert(lspec.colours.begin(), lspec.colours.end());
      hspec.user_region.front().pa = *spare;
      break;
    }
  }
  return sc;
}

// ---------------------------------------------------------------------------
// Observer views

struct ObserverView {
  DomainId observer;
  DomainId current;
  std::vector<KernelObject> objects;  // observer-owned
  std::optional<TASet> ta;            // only while the observer executes
  std::optional<VisibleProjection> mu;
};

inline ObserverView observer_view(const System& sys, DomainId observer, const DomainPolicy& policy,
                                  const CacheGeometry& g, Variant variant) {
  ObserverView v;
  v.observer = observer;
  v.current = sys.abs.current;
  for (const auto& [id, obj] : sys.abs.objects)
    if (id.owner == observer) v.objects.push_back(obj);
  const bool executing = sys.abs.current == observer;
  if (executing) v.ta = sys.abs.ta;
  if (variant == Variant::UMu)
    v.mu = visible_projection(sys.mu, observer, policy, executing ? Role::Executing : Role::Suspended, g);
  return v;
}

struct ViewDifference {
  std::string field;
  std::string a;
  std::string b;
};

namespace detail {

inline std::string describe(const TASet& ta) {
  std::string s = "{";
  for (auto p : ta.pages()) s += (s.size() > 1 ? "," : "") + hex(p);
  return s + "}";
}

inline std::string describe(const VisibleSet& s) {
  std::string out = "meta=" + hex(s.meta) + " [";
  for (std::size_t i = 0; i < s.entries.size(); ++i) {
    if (i) out += ' ';
    out += s.entries[i].resident() ? hex(s.entries[i].tag) + "@" + std::to_string(s.entries[i].level) : "-";
  }
  return out + "]";
}

inline std::optional<ViewDifference> mu_difference(const VisibleProjection& a, const VisibleProjection& b) {
  if (a.flushable != b.flushable) {
    const auto& wa = a.flushable ? a.flushable->words : std::vector<std::uint64_t>{};
    const auto& wb = b.flushable ? b.flushable->words : std::vector<std::uint64_t>{};
    for (std::size_t i = 0; i < std::max(wa.size(), wb.size()); ++i) {
      const auto x = i < wa.size() ? wa[i] : 0, y = i < wb.size() ? wb[i] : 0;
      if (x != y) return ViewDifference{"flushable[" + std::to_string(i) + "]", hex(x), hex(y)};
    }
    return ViewDifference{"flushable", "present", "absent"};
  }
  if (a.clock != b.clock)
    return ViewDifference{"clock", a.clock ? std::to_string(*a.clock) : "-", b.clock ? std::to_string(*b.clock) : "-"};
  for (std::size_t i = 0; i < std::min(a.sets.size(), b.sets.size()); ++i)
    if (a.sets[i] != b.sets[i])
      return ViewDifference{"set[" + std::to_string(a.sets[i].index) + "]", describe(a.sets[i]), describe(b.sets[i])};
  if (a.sets.size() != b.sets.size())
    return ViewDifference{"sets", std::to_string(a.sets.size()), std::to_string(b.sets.size())};
  return std::nullopt;
}

}  // namespace detail

/// First field where two views of the same observer differ, or nullopt.
inline std::optional<ViewDifference> low_equiv(const ObserverView& a, const ObserverView& b) {
  if (a.current != b.current)
    return ViewDifference{"current", std::to_string(a.current.value), std::to_string(b.current.value)};
  if (a.objects.size() != b.objects.size())
    return ViewDifference{"objects", std::to_string(a.objects.size()), std::to_string(b.objects.size())};
  for (std::size_t i = 0; i < a.objects.size(); ++i) {
    const auto& x = a.objects[i];
    const auto& y = b.objects[i];
    const auto name = "object[" + to_string(x.id) + "]";
    if (x.id != y.id || x.base != y.base || x.size != y.size)
      return ViewDifference{name, hex(x.base.value) + "+" + std::to_string(x.size),
                            hex(y.base.value) + "+" + std::to_string(y.size)};
    for (std::size_t k = 0; k < std::min(x.payload.size(), y.payload.size()); ++k)
      if (x.payload[k] != y.payload[k])
        return ViewDifference{name + ".payload[" + std::to_string(k) + "]", hex(x.payload[k]), hex(y.payload[k])};
  }
  if (a.ta != b.ta)
    return ViewDifference{"ta", a.ta ? detail::describe(*a.ta) : "-", b.ta ? detail::describe(*b.ta) : "-"};
  if (a.mu.has_value() != b.mu.has_value()) return ViewDifference{"mu", "", ""};
  if (a.mu) return detail::mu_difference(*a.mu, *b.mu);
  return std::nullopt;
}

inline std::optional<ViewDifference> low_equiv(const System& a, const System& b, DomainId observer,
                                               const DomainPolicy& policy, const CacheGeometry& g,
                                               Variant variant) {
  return low_equiv(observer_view(a, observer, policy, g, variant), observer_view(b, observer, policy, g, variant));
}

// ---------------------------------------------------------------------------
// Run pairs

struct RunPair {
  Scenario scenario;
  std::array<std::vector<ObjectSpec>, 2> objects;
  std::array<Schedule, 2> schedules;
  std::array<NondetOracle, 2> oracles;
  std::uint64_t run_seed = 0;
};

/// Builds the pair for one trial: identical observer inputs, payloads and
/// lanes (and kernel lane), independently drawn High secrets.
inline RunPair make_run_pair(const Scenario& sc, DomainId observer, std::uint64_t trial_seed) {
  RunPair rp;
  rp.scenario = sc;
  rp.run_seed = hash_combine(trial_seed, 0x72756e);
  const auto& policy = sc.kernel.policy;
  const auto counts = object_counts(sc.objects, policy.domains.size());
  for (int run = 0; run < 2; ++run) {
    auto& objs = rp.objects[run];
    objs = sc.objects;
    auto& sched = rp.schedules[run];
    sched.num_slices = sc.slices;
    rp.oracles[run] = NondetOracle(hash_combine(trial_seed, 0x6f7263));
    for (std::uint32_t d = 0; d < policy.domains.size(); ++d) {
      const DomainId dom{d};
      const bool low = dom == observer;
      const auto key = hash_combine(hash_combine(trial_seed, low ? 0x4c4f57 : 0x48494748 + run), d);
      Rng payload_rng(hash_combine(key, 1));
      randomize_payloads(objs, dom, payload_rng);
      Rng input_rng(hash_combine(key, 2));
      fill_domain_schedule(sched, sc.kernel, dom, counts, sc.max_inputs, input_rng);
      if (!low) rp.oracles[run].set_lane_seed(d, hash_combine(key, 3));
    }
  }
  return rp;
}

struct Witness {
  std::size_t trial = 0;
  std::size_t step = 0;  // transition index in the first run
  std::size_t slice = 0;
  std::string kind;      // transition label
  std::string field;
  std::string value_a;
  std::string value_b;
};

inline std::string to_string(const Witness& w) {
  std::ostringstream os;
  os << "trial=" << w.trial << " step=" << w.step << " slice=" << w.slice << " after=" << w.kind
     << " field=" << w.field << " a=" << w.value_a << " b=" << w.value_b;
  return os.str();
}

struct TrialResult {
  std::optional<Witness> witness;
  std::size_t invariant_failures = 0;  // invariant or TA failures seen in either run
  std::size_t mechanism_mismatches = 0;
  std::size_t transitions = 0;
};

/// Steps one run pair. High slices are run independently to their switch;
/// every High transition must leave the observer's view equal to the other
/// run's view at the start of the slice.
inline TrialResult run_trial(const RunPair& rp, DomainId observer, Variant variant, std::size_t trial) {
  const auto& cfg = rp.scenario.kernel;
  const auto& policy = cfg.policy;
  const auto& g = cfg.geometry();
  Runner a(cfg, boot(cfg, rp.objects[0]), rp.schedules[0], rp.oracles[0], rp.run_seed, true);
  Runner b(cfg, boot(cfg, rp.objects[1]), rp.schedules[1], rp.oracles[1], rp.run_seed, true);

  TrialResult out;
  std::size_t step = 0;
  auto view = [&](const Runner& r) { return observer_view(r.system(), observer, policy, g, variant); };
  auto audit = [&](const StepRecord& rec) {
    ++out.transitions;
    if (rec.has(FailureKind::InvariantViolation) || rec.has(FailureKind::TaViolation)) ++out.invariant_failures;
    if (rec.kind == RecordKind::DomainSwitch && !mechanism_exact(rec, policy)) ++out.mechanism_mismatches;
  };
  auto flag = [&](const StepRecord& rec, const ViewDifference& d) {
    out.witness = Witness{trial, step, rec.slice, rec.label, d.field, d.a, d.b};
  };

  while (!a.done() && !b.done() && !out.witness) {
    if (a.system().abs.current == observer || b.system().abs.current == observer) {
      auto ra = a.advance();
      auto rb = b.advance();
      audit(ra);
      audit(rb);
      ++step;
      if (ra.kind != rb.kind) {
        flag(ra, ViewDifference{"transition", to_string(ra.kind), to_string(rb.kind)});
      } else if (auto d = low_equiv(view(a), view(b))) {
        flag(ra, *d);
      }
      continue;
    }
    const auto start_a = view(a);
    const auto start_b = view(b);
    while (!a.at_switch() && !a.done() && !out.witness) {
      auto r = a.advance();
      audit(r);
      ++step;
      if (auto d = low_equiv(view(a), start_b)) flag(r, *d);
    }
    while (!b.at_switch() && !b.done() && !out.witness) {
      auto r = b.advance();
      audit(r);
      if (auto d = low_equiv(start_a, view(b))) {
        flag(r, ViewDifference{d->field, d->a, d->b});
      }
    }
    if (out.witness || a.done() || b.done()) break;
    auto ra = a.advance();
    auto rb = b.advance();
    audit(ra);
    audit(rb);
    ++step;
    if (auto d = low_equiv(view(a), view(b))) flag(ra, *d);
  }
  if (!out.witness && a.done() != b.done())
    out.witness = Witness{trial, step, a.slice(), "end", "done", std::to_string(a.done()), std::to_string(b.done())};
  return out;
}

struct ConfidentialityReport {
  Variant variant = Variant::UMu;
  Mutation mutation = Mutation::None;
  DomainId observer;
  std::size_t trials = 0;
  std::size_t violations = 0;  // trials with at least one witness
  std::optional<Witness> first_witness;
  std::uint64_t seed = 0;
  std::size_t invariant_failures = 0;
  std::size_t mechanism_mismatches = 0;
  std::size_t transitions = 0;

  /// Whether the run satisfied the hypotheses under which a clean result
  /// means anything: the invariant held everywhere and every switch ran the
  /// exact mechanism.
  bool hypothesis_held() const { return invariant_failures == 0 && mechanism_mismatches == 0; }
};

inline std::string format_report(const ConfidentialityReport& r) {
  std::ostringstream os;
  os << "variant=" << to_string(r.variant) << "\n"
     << "mutation=" << to_string(r.mutation) << "\n"
     << "observer=" << r.observer.value << "\n"
     << "seed=" << r.seed << "\n"
     << "trials=" << r.trials << "\n"
     << "violations=" << r.violations << "\n"
     << "transitions=" << r.transitions << "\n"
     << "hypothesis_held=" << (r.hypothesis_held() ? "true" : "false") << "\n"
     << "invariant_failures=" << r.invariant_failures << "\n"
     << "mechanism_mismatches=" << r.mechanism_mismatches << "\n"
     << "first_witness=" << (r.first_witness ? to_string(*r.first_witness) : "none") << "\n";
  return os.str();
}

/// Runs `trials` run pairs (spread over `jobs` threads; the result does not
/// depend on `jobs`).
inline ConfidentialityReport check_confidentiality(const Scenario& base, DomainId observer, Variant variant,
                                                   Mutation mutation, std::size_t trials, std::uint64_t seed,
                                                   unsigned jobs = 1) {
  if (trials == 0) throw std::invalid_argument("trials must be at least 1");
  if (!base.kernel.policy.has(observer))
    throw std::out_of_range("unknown observer domain " + std::to_string(observer.value));
  const auto sc = apply_mutation(base, mutation, observer);

  std::vector<TrialResult> results(trials);
  auto work = [&](std::size_t first, std::size_t stride) {
    for (std::size_t t = first; t < trials; t += stride)
      results[t] = run_trial(make_run_pair(sc, observer, hash_combine(seed, t)), observer, variant, t);
  };
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(trials)));
  if (jobs == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned j = 0; j < jobs; ++j) pool.emplace_back(work, j, jobs);
  }

  ConfidentialityReport r;
  r.variant = variant;
  r.mutation = mutation;
  r.observer = observer;
  r.trials = trials;
  r.seed = seed;
  for (const auto& t : results) {
    r.invariant_failures += t.invariant_failures;
    r.mechanism_mismatches += t.mechanism_mismatches;
    r.transitions += t.transitions;
    if (t.witness) {
      ++r.violations;
      if (!r.first_witness) r.first_witness = t.witness;
    }
  }
  return r;
}

inline ConfidentialityReport check_confidentiality_u(const Scenario& sc, DomainId observer, std::size_t trials,
                                                     std::uint64_t seed, Mutation m = Mutation::None,
                                                     unsigned jobs = 1) {
  return check_confidentiality(sc, observer, Variant::U, m, trials, seed, jobs);
}

inline ConfidentialityReport check_confidentiality_u_mu(const Scenario& sc, DomainId observer, std::size_t trials,
                                                        std::uint64_t seed, Mutation m = Mutation::None,
                                                        unsigned jobs = 1) {
  return check_confidentiality(sc, observer, Variant::UMu, m, trials, seed, jobs);
}

}  // namespace tp
