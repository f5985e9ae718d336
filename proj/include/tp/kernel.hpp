#pragma once

// A toy multi-domain kernel: fixed round-robin slices, touched-address
// tracking that fails on untracked access, the partition subset invariant
// and a four-phase domain switch (old clean, dirty, mechanism, new clean).

#include <bit>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "tp/address.hpp"
#include "tp/microarch.hpp"
#include "tp/oracle.hpp"
#include "tp/policy.hpp"
#include "tp/selector.hpp"

namespace tp {

struct ObjectId {
  DomainId owner;
  std::uint32_t index = 0;
  auto operator<=>(const ObjectId&) const = default;
};

inline std::string to_string(ObjectId id) {
  return std::to_string(id.owner.value) + "." + std::to_string(id.index);
}

struct KernelObject {
  ObjectId id;
  VirtAddr base;
  std::uint64_t size = 0;
  std::vector<std::uint64_t> payload;  // one word per 8 bytes
  bool operator==(const KernelObject&) const = default;
};

struct ObjectSpec {
  DomainId owner;
  VirtAddr base;
  std::uint64_t size = 0;
  std::vector<std::uint64_t> payload;  // zero-filled when shorter than the object
};

enum class SyscallKind { Noop, ReadObject, WriteObject, Allocate, TouchImage, TouchGlobals, RawRead };

inline const char* to_string(SyscallKind k) {
  switch (k) {
    case SyscallKind::Noop: return "noop";
    case SyscallKind::ReadObject: return "read_object";
    case SyscallKind::WriteObject: return "write_object";
    case SyscallKind::Allocate: return "allocate";
    case SyscallKind::TouchImage: return "touch_image";
    case SyscallKind::TouchGlobals: return "touch_globals";
    case SyscallKind::RawRead: return "raw_read";
  }
  return "?";
}

/// User-mode computation over the caller's own objects (by index).
struct UserStep {
  std::vector<std::uint32_t> objects;
  bool operator==(const UserStep&) const = default;
};

struct KernelCall {
  SyscallKind kind = SyscallKind::Noop;
  ObjectId object{};            // ReadObject / WriteObject
  std::uint64_t offset = 0;     // byte offset into the object
  std::uint64_t value = 0;      // WriteObject
  std::uint64_t size = 0;       // Allocate
  std::uint64_t global_mask = 0;  // TouchGlobals: bit i selects kernel_globals[i]
  VirtAddr address{};           // RawRead: an access that skips get_object
  bool operator==(const KernelCall&) const = default;
};

using Input = std::variant<UserStep, KernelCall>;

enum class FailureKind {
  TaViolation,
  InvariantViolation,
  SlotOverrun,
  PadViolation,
  TranslationFault,
  UnknownObject,
  MechanismPostcondition
};

inline const char* to_string(FailureKind k) {
  switch (k) {
    case FailureKind::TaViolation: return "ta_violation";
    case FailureKind::InvariantViolation: return "invariant_violation";
    case FailureKind::SlotOverrun: return "slot_overrun";
    case FailureKind::PadViolation: return "pad_violation";
    case FailureKind::TranslationFault: return "translation_fault";
    case FailureKind::UnknownObject: return "unknown_object";
    case FailureKind::MechanismPostcondition: return "mechanism_postcondition";
  }
  return "?";
}

struct Failure {
  FailureKind kind;
  std::string detail;
  std::vector<VirtAddr> witnesses;
};

struct MemAccess {
  VirtAddr v;
  bool write = false;
  bool tracked = false;
};

enum class RecordKind { UserStep, KernelCall, Idle, DomainSwitch };

inline const char* to_string(RecordKind k) {
  switch (k) {
    case RecordKind::UserStep: return "user_step";
    case RecordKind::KernelCall: return "kernel_call";
    case RecordKind::Idle: return "idle";
    case RecordKind::DomainSwitch: return "domain_switch";
  }
  return "?";
}

struct PhaseRecord {
  std::string name;
  TASet ta_after;
  Trace trace;
  Cycles clock_after = 0;
};

struct StepRecord {
  RecordKind kind = RecordKind::UserStep;
  std::string label;       // syscall name or phase summary
  DomainId domain;         // executing domain when the transition started
  std::size_t slice = 0;
  TASet ta_before;
  TASet ta_after;
  Trace trace;
  std::vector<PhaseRecord> phases;  // domain switches only
  std::vector<MemAccess> accesses;
  std::vector<PhysAddr> global_accesses;
  Cycles clock_before = 0;
  Cycles clock_after = 0;
  Cycles deadline = 0;  // domain switches only
  std::optional<MicroArchState> mu_before;
  std::optional<MicroArchState> mu_after;
  std::vector<Failure> failures;

  Cycles clock_delta() const { return clock_after - clock_before; }
  bool failed() const { return !failures.empty(); }
  bool has(FailureKind k) const {
    for (const auto& f : failures)
      if (f.kind == k) return true;
    return false;
  }
};

/// Which parts of the switch mechanism run. All on is the correct sequence.
struct Mechanism {
  bool offcore_global_flush = true;
  bool oncore_flush = true;
  bool pad = true;
  bool prefetch_globals = false;  // replace the targeted flush by reading every global
};

struct LeakPlant {
  DomainId source;
  DomainId sink;
};

struct KernelConfig {
  Machine machine;
  Universe universe;
  DomainPolicy policy;
  std::size_t trace_budget = 96;
  Mechanism mechanism;
  SelectorMode selector = SelectorMode::Visible;
  std::optional<LeakPlant> leak;
  bool record_states = false;

  const CacheGeometry& geometry() const { return machine.geometry; }

  /// Upper bound on the clock delta of any step with `global_accesses` fixed
  /// accesses; used to defer steps that might run past the timer tick.
  Cycles step_wcet(std::size_t global_accesses) const {
    return static_cast<Cycles>(global_accesses + trace_budget) * machine.cost.access_wcet();
  }
};

struct AbstractState {
  std::map<ObjectId, KernelObject> objects;
  DomainId current;
  Cycles tick = 0;  // next timer interrupt
  AddressMap map;
  TASet ta;
  std::vector<std::uint32_t> next_object_index;  // per domain
  std::vector<std::uint64_t> steps_taken;        // per domain
  std::uint64_t switches = 0;

  std::int64_t slot_remaining(Cycles now) const {
    return static_cast<std::int64_t>(tick) - static_cast<std::int64_t>(now);
  }
  bool operator==(const AbstractState&) const = default;
};

struct System {
  AbstractState abs;
  MicroArchState mu;
};

class KernelFault : public std::runtime_error {
 public:
  KernelFault(FailureKind k, const std::string& what) : std::runtime_error(what), kind(k) {}
  FailureKind kind;
};

inline System boot(const KernelConfig& cfg, const std::vector<ObjectSpec>& objects) {
  System sys;
  const auto& g = cfg.geometry();
  sys.abs.map = build_address_map(cfg.policy, g);
  sys.abs.ta = TASet(g.page_size());
  sys.abs.current = DomainId{0};
  sys.abs.tick = cfg.policy.slice_length;
  sys.abs.next_object_index.assign(cfg.policy.domains.size(), 0);
  sys.abs.steps_taken.assign(cfg.policy.domains.size(), 0);
  for (const auto& spec : objects) {
    auto& next = sys.abs.next_object_index.at(spec.owner.value);
    KernelObject obj{ObjectId{spec.owner, next++}, spec.base, spec.size, spec.payload};
    obj.payload.resize(std::max<std::uint64_t>(1, (spec.size + 7) / 8), 0);
    sys.abs.objects.emplace(obj.id, std::move(obj));
  }
  sys.mu = MicroArchState::initial(cfg.machine);
  return sys;
}

// ---------------------------------------------------------------------------
// Abstract-level operations

/// Retrieves an object and tracks all of its pages (the whole object, even if
/// only part of it is used). Throws KernelFault(UnknownObject).
inline const KernelObject& get_object(AbstractState& s, ObjectId id) {
  auto it = s.objects.find(id);
  if (it == s.objects.end())
    throw KernelFault(FailureKind::UnknownObject, "unknown object " + to_string(id));
  s.ta.insert_range(it->second.base, it->second.size);
  return it->second;
}

enum class Access { Read, Write };

/// Memory access under fail-on-untracked semantics. Returns the failure when
/// v is not in the TA set; otherwise performs the write (if any).
inline std::optional<Failure> access_mem(AbstractState& s, VirtAddr v, Access rw,
                                         std::uint64_t value = 0) {
  if (!s.ta.contains(v))
    return Failure{FailureKind::TaViolation, "untracked access to " + hex(v.value), {v}};
  if (rw == Access::Write) {
    for (auto& [id, obj] : s.objects) {
      if (v.value >= obj.base.value && v.value < obj.base.value + obj.size) {
        obj.payload.at((v.value - obj.base.value) / 8) = value;
        break;
      }
    }
  }
  return std::nullopt;
}

struct InvariantResult {
  bool ok = true;
  std::vector<VirtAddr> witnesses;
  explicit operator bool() const { return ok; }
};

/// Every TA page must translate into the current domain's colours (or hold
/// kernel globals). Unmapped TA pages are violations too.
inline InvariantResult partition_subset_invariant(const AbstractState& s, const DomainPolicy& policy,
                                                  const CacheGeometry& g) {
  InvariantResult r;
  const auto& colours = policy.domain(s.current).colours;
  for (auto page : s.ta.pages()) {
    VirtAddr v{page};
    if (!s.map.is_mapped(v)) {
      r.ok = false;
      r.witnesses.push_back(v);
      continue;
    }
    const auto p = s.map.translate(v);
    bool global = false;
    for (auto gl : policy.kernel_globals)
      if (g.page_base(gl.value) == p.value) global = true;
    if (!global && !colours.contains(colour_of(p, g))) {
      r.ok = false;
      r.witnesses.push_back(v);
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Transitions

namespace detail {

inline void check_invariant(const KernelConfig& cfg, const AbstractState& s, StepRecord& rec) {
  auto inv = partition_subset_invariant(s, cfg.policy, cfg.geometry());
  if (!inv) {
    std::string detail = "TA pages outside domain " + std::to_string(s.current.value) + " partition:";
    for (auto w : inv.witnesses) detail += " " + hex(w.value);
    rec.failures.push_back(Failure{FailureKind::InvariantViolation, detail, inv.witnesses});
  }
}

inline void run_trace(const KernelConfig& cfg, System& sys, const Trace& trace, NondetOracle& oracle,
                      StepRecord& rec) {
  try {
    apply_trace_in_place(sys.mu, trace, oracle, cfg.machine);
  } catch (const PadViolation& e) {
    rec.failures.push_back(Failure{FailureKind::PadViolation,
                                   "pad to " + std::to_string(e.target) + " at " +
                                       std::to_string(e.now) + " (op " + std::to_string(e.index) + ")",
                                   {}});
  }
}

inline Trace select_for(const KernelConfig& cfg, const System& sys, const TASet& touched,
                        std::uint64_t seed) {
  const auto& g = cfg.geometry();
  if (cfg.selector == SelectorMode::Peek)
    return select_trace_peeking(touched, sys.mu, sys.abs.map, g, cfg.trace_budget, seed);
  auto visible = visible_projection(sys.mu, sys.abs.current, cfg.policy, Role::Executing, g);
  return select_trace(touched, visible, sys.abs.map, g, cfg.trace_budget, seed);
}

inline std::size_t global_access_count(const KernelConfig& cfg, const Input& input) {
  if (auto call = std::get_if<KernelCall>(&input); call && call->kind == SyscallKind::TouchGlobals) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < cfg.policy.kernel_globals.size() && i < 64; ++i)
      if ((call->global_mask >> i) & 1) ++n;
    return n;
  }
  return 0;
}

}  // namespace detail

inline Cycles step_wcet(const KernelConfig& cfg, const Input& input) {
  return cfg.step_wcet(detail::global_access_count(cfg, input));
}

/// Executes one user step or system call of the current domain.
///
/// The abstract semantics run first and accumulate the TA set; the hardware
/// trace is then chosen by the selector from the pages this step tracked
/// (prefixed by any fixed-order kernel-global accesses) and applied to s_mu
/// under the current domain's oracle lane.
inline StepRecord step(const KernelConfig& cfg, System& sys, const Input& input,
                       NondetOracle& oracle, std::uint64_t seed) {
  const auto& g = cfg.geometry();
  auto& s = sys.abs;
  StepRecord rec;
  rec.domain = s.current;
  rec.ta_before = s.ta;
  rec.clock_before = sys.mu.clock;
  if (cfg.record_states) rec.mu_before = sys.mu;
  const auto slot_before = s.slot_remaining(sys.mu.clock);

  TASet touched(g.page_size());
  auto track = [&](ObjectId id) -> const KernelObject& {
    const auto& obj = get_object(s, id);
    touched.insert_range(obj.base, obj.size);
    return obj;
  };
  auto touch = [&](VirtAddr v, Access rw, std::uint64_t value = 0) {
    auto failure = access_mem(s, v, rw, value);
    rec.accesses.push_back(MemAccess{v, rw == Access::Write, !failure});
    if (failure) rec.failures.push_back(*failure);
  };

  try {
    if (auto user = std::get_if<UserStep>(&input)) {
      rec.kind = RecordKind::UserStep;
      rec.label = "user";
      for (auto idx : user->objects) {
        const auto& obj = track(ObjectId{s.current, idx});
        touch(obj.base, Access::Read);
      }
    } else {
      const auto& call = std::get<KernelCall>(input);
      rec.kind = RecordKind::KernelCall;
      rec.label = to_string(call.kind);
      switch (call.kind) {
        case SyscallKind::Noop:
          break;
        case SyscallKind::ReadObject: {
          const auto& obj = track(call.object);
          touch(VirtAddr{obj.base.value + call.offset % obj.size}, Access::Read);
          break;
        }
        case SyscallKind::WriteObject: {
          const auto& obj = track(call.object);
          touch(VirtAddr{obj.base.value + (call.offset % obj.size) / 8 * 8}, Access::Write, call.value);
          if (cfg.leak && cfg.leak->source == s.current) {
            for (auto& [id, victim] : s.objects) {
              if (id.owner != cfg.leak->sink) continue;
              const auto& sink = track(id);
              touch(sink.base, Access::Write, call.value);
              break;
            }
          }
          break;
        }
        case SyscallKind::Allocate: {
          const auto& spec = cfg.policy.domain(s.current);
          const auto pages_needed = std::max<std::uint64_t>(1, (call.size + g.page_size() - 1) / g.page_size());
          auto free_page = [&](VirtAddr page) {
            for (const auto& [id, obj] : s.objects)
              if (id.owner == s.current && page.value + g.page_size() > obj.base.value &&
                  page.value < obj.base.value + obj.size)
                return false;
            return true;
          };
          std::vector<VirtAddr> region;
          for (const auto& m : spec.user_region) region.push_back(m.va);
          std::sort(region.begin(), region.end());
          for (std::size_t i = 0; i + pages_needed <= region.size(); ++i) {
            bool ok = true;
            for (std::uint64_t k = 0; k < pages_needed && ok; ++k)
              ok = region[i + k].value == region[i].value + k * g.page_size() && free_page(region[i + k]);
            if (!ok) continue;
            ObjectId id{s.current, s.next_object_index.at(s.current.value)++};
            const auto size = pages_needed * g.page_size();
            s.objects.emplace(id, KernelObject{id, region[i], size, std::vector<std::uint64_t>(size / 8, 0)});
            const auto& obj = track(id);
            touch(obj.base, Access::Write, 0);
            break;
          }
          break;
        }
        case SyscallKind::TouchImage: {
          for (auto page : cfg.policy.domain(s.current).kernel_image_pages(g.page_size())) {
            s.ta.insert(page);
            touched.insert(page);
          }
          const auto& spec = cfg.policy.domain(s.current);
          if (!spec.kernel_image.empty()) touch(spec.kernel_image_va, Access::Read);
          break;
        }
        case SyscallKind::TouchGlobals:
          for (std::size_t i = 0; i < cfg.policy.kernel_globals.size() && i < 64; ++i)
            if ((call.global_mask >> i) & 1) rec.global_accesses.push_back(cfg.policy.kernel_globals[i]);
          break;
        case SyscallKind::RawRead:
          touch(call.address, Access::Read);
          if (s.ta.contains(call.address)) touched.insert(call.address);
          break;
      }
    }
  } catch (const KernelFault& e) {
    rec.failures.push_back(Failure{e.kind, e.what(), {}});
  }

  detail::check_invariant(cfg, s, rec);

  Trace trace;
  for (auto gl : rec.global_accesses) trace.push_back(Read{VirtAddr{gl.value}, gl});
  auto selected = detail::select_for(cfg, sys, touched, seed);
  trace.insert(trace.end(), selected.begin(), selected.end());

  oracle.select_lane(s.current.value);
  detail::run_trace(cfg, sys, trace, oracle, rec);

  rec.trace = std::move(trace);
  rec.ta_after = s.ta;
  rec.clock_after = sys.mu.clock;
  if (cfg.record_states) rec.mu_after = sys.mu;
  if (static_cast<std::int64_t>(rec.clock_delta()) > slot_before)
    rec.failures.push_back(Failure{FailureKind::SlotOverrun,
                                   "step took " + std::to_string(rec.clock_delta()) + " with " +
                                       std::to_string(slot_before) + " left in the slot",
                                   {}});
  ++s.steps_taken.at(s.current.value);
  return rec;
}

/// Waits for the timer interrupt: the clock moves to the tick.
inline StepRecord idle(const KernelConfig& cfg, System& sys) {
  StepRecord rec;
  rec.kind = RecordKind::Idle;
  rec.label = "idle";
  rec.domain = sys.abs.current;
  rec.ta_before = rec.ta_after = sys.abs.ta;
  rec.clock_before = sys.mu.clock;
  if (cfg.record_states) rec.mu_before = sys.mu;
  if (sys.mu.clock < sys.abs.tick) {
    rec.trace.push_back(PadTo{sys.abs.tick});
    sys.mu.clock = sys.abs.tick;
  }
  rec.clock_after = sys.mu.clock;
  if (cfg.record_states) rec.mu_after = sys.mu;
  return rec;
}

/// The primitive sequence the mechanism phase executes under `cfg`.
inline Trace mechanism_trace(const KernelConfig& cfg, Cycles deadline) {
  Trace t;
  const auto& globals = cfg.policy.kernel_globals;
  if (cfg.mechanism.prefetch_globals) {
    for (auto gl : globals) t.push_back(Read{VirtAddr{gl.value}, gl});
  } else if (cfg.mechanism.offcore_global_flush) {
    t.push_back(OffCoreFlush{globals});
  }
  if (cfg.mechanism.oncore_flush) t.push_back(OnCoreFlush{});
  if (cfg.mechanism.pad) t.push_back(PadTo{deadline});
  return t;
}

/// True when a switch record's mechanism phase is exactly the correct sequence.
inline bool mechanism_exact(const StepRecord& rec, const DomainPolicy& policy) {
  const Trace expected{OffCoreFlush{policy.kernel_globals}, OnCoreFlush{}, PadTo{rec.deadline}};
  for (const auto& ph : rec.phases)
    if (ph.name == "mechanism") return ph.trace == expected;
  return false;
}

/// Deadline of the switch that follows the current slice.
inline Cycles switch_deadline_of(const KernelConfig& cfg, const AbstractState& s) {
  return s.tick + cfg.policy.switch_deadline;
}

/// Switches to the next domain. Precondition: the slice is used up.
inline StepRecord domain_switch(const KernelConfig& cfg, System& sys, NondetOracle& oracle) {
  auto& s = sys.abs;
  if (s.slot_remaining(sys.mu.clock) > 0)
    throw std::logic_error("domain_switch before the timer tick");
  const auto& g = cfg.geometry();
  const DomainId old = s.current;
  const DomainId next{static_cast<std::uint32_t>((old.value + 1) % cfg.policy.domains.size())};
  const auto& old_spec = cfg.policy.domain(old);
  const auto& next_spec = cfg.policy.domain(next);
  const Cycles deadline = switch_deadline_of(cfg, s);

  StepRecord rec;
  rec.kind = RecordKind::DomainSwitch;
  rec.label = "switch " + std::to_string(old.value) + "->" + std::to_string(next.value);
  rec.domain = old;
  rec.deadline = deadline;
  rec.ta_before = s.ta;
  rec.clock_before = sys.mu.clock;
  if (cfg.record_states) rec.mu_before = sys.mu;

  auto finish_phase = [&](std::string name, Trace trace) {
    rec.trace.insert(rec.trace.end(), trace.begin(), trace.end());
    rec.phases.push_back(PhaseRecord{std::move(name), s.ta, std::move(trace), sys.mu.clock});
  };

  // Old clean: scheduler bookkeeping for the outgoing domain. The scheduler
  // global is always written, in the same place, whatever the domain did.
  {
    for (auto page : old_spec.kernel_image_pages(g.page_size())) s.ta.insert(page);
    detail::check_invariant(cfg, s, rec);
    Trace t;
    if (!cfg.policy.kernel_globals.empty()) {
      const auto sched = cfg.policy.kernel_globals.front();
      t.push_back(Write{VirtAddr{sched.value}, sched});
      rec.global_accesses.push_back(sched);
    }
    if (!old_spec.kernel_image.empty())
      t.push_back(Read{old_spec.kernel_image_va, s.map.translate(old_spec.kernel_image_va)});
    oracle.select_lane(old.value);
    detail::run_trace(cfg, sys, t, oracle, rec);
    finish_phase("old_clean", std::move(t));
  }

  // Dirty: copies the kernel stack between images. Off unless configured.
  if (cfg.policy.dirty_phase && !old_spec.kernel_image.empty() && !next_spec.kernel_image.empty()) {
    for (auto page : next_spec.kernel_image_pages(g.page_size())) s.ta.insert(page);
    const VirtAddr from{old_spec.kernel_image_va.value + g.line_size()};
    const VirtAddr to{next_spec.kernel_image_va.value + g.line_size()};
    Trace t{Read{from, s.map.translate(from)}, Write{to, s.map.translate(to)}};
    oracle.select_lane(NondetOracle::kKernelLane);
    detail::run_trace(cfg, sys, t, oracle, rec);
    finish_phase("dirty", std::move(t));
  }

  // Mechanism: fixed primitives only. The TA set is emptied here.
  {
    s.ta.clear();
    Trace t = mechanism_trace(cfg, deadline);
    oracle.select_lane(NondetOracle::kKernelLane);
    detail::run_trace(cfg, sys, t, oracle, rec);
    if (!sys.mu.flushable.is_reset())
      rec.failures.push_back(Failure{FailureKind::MechanismPostcondition, "flushable state not reset", {}});
    for (auto set_idx : cfg.policy.global_sets(g))
      if (!sys.mu.partitionable.set_is_reset(set_idx))
        rec.failures.push_back(Failure{FailureKind::MechanismPostcondition,
                                       "kernel-global set " + std::to_string(set_idx) + " not reset",
                                       {}});
    if (sys.mu.clock != deadline)
      rec.failures.push_back(Failure{FailureKind::MechanismPostcondition,
                                     "clock " + std::to_string(sys.mu.clock) + " != deadline " +
                                         std::to_string(deadline),
                                     {}});
    finish_phase("mechanism", std::move(t));
  }

  // New clean: the incoming domain's bookkeeping, on its own resources.
  {
    s.current = next;
    s.tick = deadline + cfg.policy.slice_length;
    for (auto page : next_spec.kernel_image_pages(g.page_size())) s.ta.insert(page);
    detail::check_invariant(cfg, s, rec);
    Trace t;
    if (!next_spec.kernel_image.empty())
      t.push_back(Read{next_spec.kernel_image_va, s.map.translate(next_spec.kernel_image_va)});
    oracle.select_lane(next.value);
    detail::run_trace(cfg, sys, t, oracle, rec);
    finish_phase("new_clean", std::move(t));
  }

  ++s.switches;
  rec.ta_after = s.ta;
  rec.clock_after = sys.mu.clock;
  if (cfg.record_states) rec.mu_after = sys.mu;
  return rec;
}

// ---------------------------------------------------------------------------
// Driver

/// Inputs per domain per round: slices[d][r] is what domain d does in its
/// r-th slice. Missing entries mean an idle slice.
struct Schedule {
  std::vector<std::vector<std::vector<Input>>> slices;
  std::size_t num_slices = 0;  // total slices (each ends in a domain switch)
};

/// Steppable execution of a schedule: each advance() performs one transition
/// (a step, the idle wait for the tick, or a domain switch).
class Runner {
 public:
  Runner(const KernelConfig& cfg, System sys, Schedule schedule, NondetOracle oracle,
         std::uint64_t seed, bool collect = false)
      : cfg_(&cfg),
        sys_(std::move(sys)),
        schedule_(std::move(schedule)),
        oracle_(std::move(oracle)),
        seed_(seed),
        collect_(collect),
        rounds_(cfg.policy.domains.size(), 0),
        carry_(cfg.policy.domains.size()) {
    load_slice();
  }

  bool done() const { return aborted_ || slice_ >= schedule_.num_slices; }
  bool aborted() const { return aborted_; }
  /// True when the next transition is the domain switch ending this slice.
  bool at_switch() const { return !done() && pending_.empty() && idle_done_; }
  std::size_t slice() const { return slice_; }
  const System& system() const { return sys_; }
  const NondetOracle& oracle() const { return oracle_; }

  StepRecord advance() {
    if (done()) throw std::logic_error("runner finished");
    StepRecord rec;
    if (!pending_.empty()) {
      const auto remaining = sys_.abs.slot_remaining(sys_.mu.clock);
      if (remaining < 0 || step_wcet(*cfg_, pending_.front()) > static_cast<Cycles>(remaining)) {
        auto& carry = carry_[sys_.abs.current.value];
        carry.insert(carry.end(), pending_.begin(), pending_.end());
        pending_.clear();
      }
    }
    if (!pending_.empty()) {
      Input input = std::move(pending_.front());
      pending_.pop_front();
      const auto d = sys_.abs.current.value;
      const auto seed = hash_combine(hash_combine(seed_, d), sys_.abs.steps_taken[d]);
      rec = step(*cfg_, sys_, input, oracle_, seed);
    } else if (!idle_done_) {
      rec = idle(*cfg_, sys_);
      idle_done_ = true;
    } else {
      rec = domain_switch(*cfg_, sys_, oracle_);
      ++slice_;
      load_slice();
    }
    rec.slice = rec.kind == RecordKind::DomainSwitch ? slice_ - 1 : slice_;
    if (rec.failed() && !collect_) aborted_ = true;
    return rec;
  }

 private:
  void load_slice() {
    idle_done_ = false;
    pending_.clear();
    if (slice_ >= schedule_.num_slices) return;
    const auto d = sys_.abs.current.value;
    auto& carry = carry_[d];
    pending_.assign(carry.begin(), carry.end());
    carry.clear();
    const auto round = rounds_[d]++;
    if (d < schedule_.slices.size() && round < schedule_.slices[d].size()) {
      const auto& inputs = schedule_.slices[d][round];
      pending_.insert(pending_.end(), inputs.begin(), inputs.end());
    }
  }

  const KernelConfig* cfg_;
  System sys_;
  Schedule schedule_;
  NondetOracle oracle_;
  std::uint64_t seed_;
  bool collect_;
  std::size_t slice_ = 0;
  bool idle_done_ = false;
  bool aborted_ = false;
  std::deque<Input> pending_;
  std::vector<std::size_t> rounds_;
  std::vector<std::vector<Input>> carry_;
};

struct RunResult {
  std::vector<StepRecord> records;
  bool aborted = false;
  std::size_t failures = 0;
  System final_state;
};

/// Runs the whole schedule. Stops at the first failing transition unless
/// `collect` is set.
inline RunResult run_system(const KernelConfig& cfg, System sys, Schedule schedule,
                            NondetOracle oracle, std::uint64_t seed, bool collect = false) {
  Runner runner(cfg, std::move(sys), std::move(schedule), std::move(oracle), seed, collect);
  RunResult out;
  while (!runner.done()) {
    out.records.push_back(runner.advance());
    out.failures += out.records.back().failures.size();
  }
  out.aborted = runner.aborted();
  out.final_state = runner.system();
  return out;
}

/// True when the record's hardware trace stayed inside what was tracked:
/// per phase for domain switches, against ta_after for everything else.
inline bool record_adheres(const StepRecord& rec, const AddressMap& map, const DomainPolicy& policy) {
  if (rec.kind == RecordKind::DomainSwitch) {
    for (const auto& ph : rec.phases)
      if (!adheres(ph.trace, ph.ta_after, map, policy.kernel_globals)) return false;
    return true;
  }
  return static_cast<bool>(adheres(rec.trace, rec.ta_after, map, policy.kernel_globals));
}

}  // namespace tp
