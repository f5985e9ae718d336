#include <gtest/gtest.h>

#include "support.hpp"

using namespace tp;

namespace {

struct Bench {
  Machine m = tpt::machine_4k();
  Universe u = tpt::universe_pages(m.geometry, 16);
  MicroArchState s = MicroArchState::initial(m);
  NondetOracle o{7};

  void read(std::uint64_t a) { apply_op_in_place(s, Read{VirtAddr{a}, PhysAddr{a}}, o, m); }
};

}  // namespace

TEST(Microarch, OnCoreFlushResetsFlushable) {
  Bench b;
  for (std::uint64_t a = 0; a < 0x2000; a += 0x140) b.read(a);
  ASSERT_FALSE(b.s.flushable.is_reset());
  const auto part = b.s.partitionable;
  apply_op_in_place(b.s, OnCoreFlush{}, b.o, b.m);
  EXPECT_TRUE(b.s.flushable.is_reset());
  EXPECT_EQ(b.s.flushable, FlushableState::reset(b.m.cost.flushable_words));
  EXPECT_EQ(b.s.partitionable, part);
}

TEST(Microarch, PadToSetsClockOnly) {
  Bench b;
  b.read(0x40);
  b.s.clock = 100;
  const auto before = b.s;
  const auto after = apply_op(b.s, PadTo{150}, b.o, b.m);
  EXPECT_EQ(after.clock, 150u);
  EXPECT_EQ(after.flushable, before.flushable);
  EXPECT_EQ(after.partitionable, before.partitionable);
}

TEST(Microarch, PadIntoThePastIsAnError) {
  Bench b;
  b.s.clock = 100;
  try {
    apply_trace(b.s, Trace{Read{VirtAddr{0}, PhysAddr{0}}, PadTo{99}}, b.o, b.m);
    FAIL() << "no pad violation";
  } catch (const PadViolation& e) {
    EXPECT_EQ(e.index, 1u);
    EXPECT_EQ(e.target, 99u);
    EXPECT_GT(e.now, 100u);
  }
}

TEST(Microarch, OffCoreFlushEvictsCollisionSet) {
  Bench b;
  const auto& g = b.m.geometry;
  const PhysAddr p{0x1240};
  const auto coll = collision_set_of(p, g, b.u.lines());
  ASSERT_EQ(coll.size(), 4u);  // 16 pages over 4 colours
  for (auto q : coll) b.read(q.value);
  b.read(0x80);  // an unrelated set
  for (auto q : coll) ASSERT_TRUE(b.s.partitionable.resident(q, g));

  apply_op_in_place(b.s, OffCoreFlush{{p}}, b.o, b.m);
  for (auto q : coll) EXPECT_FALSE(b.s.partitionable.resident(q, g)) << hex(q.value);
  EXPECT_TRUE(b.s.partitionable.set_is_reset(set_index_of(p, g)));
  EXPECT_TRUE(b.s.partitionable.resident(PhysAddr{0x80}, g));
}

TEST(Microarch, ReadThenFlushTrace) {
  Bench b;
  const PhysAddr a{0x2300};
  apply_trace_in_place(b.s, Trace{Read{VirtAddr{a.value}, a}, OnCoreFlush{}}, b.o, b.m);
  EXPECT_TRUE(b.s.flushable.is_reset());
  EXPECT_EQ(b.s.partitionable.cachedness(a, b.m.geometry), 1);
}

TEST(Microarch, EmptyTraceAndFinalPad) {
  Bench b;
  b.read(0x100);
  const auto before = b.s;
  EXPECT_EQ(apply_trace(before, Trace{}, b.o, b.m), before);
  const auto after = apply_trace(before, Trace{Read{VirtAddr{0x200}, PhysAddr{0x200}}, PadTo{before.clock + 500}}, b.o, b.m);
  EXPECT_EQ(after.clock, before.clock + 500);
}

TEST(Microarch, TouchCostConstants) {
  Bench b;
  const auto& g = b.m.geometry;
  const auto& c = b.m.cost;
  const PhysAddr p{0x1240};
  EXPECT_EQ(touch_cost(b.s, p, b.m), c.miss_cost);
  b.read(p.value);
  EXPECT_EQ(touch_cost(b.s, p, b.m), c.hit_cost.at(0));

  // Fill p's set with other tags: p missing from a full set.
  Bench full;
  for (const auto& q : collision_set_of(p, g, full.u.lines()))
    if (q != p) full.read(q.value);
  full.read(p.value + 4 * g.way_span());  // outside the universe, same set
  EXPECT_FALSE(full.s.partitionable.resident(p, g));
  EXPECT_EQ(touch_cost(full.s, p, full.m), c.miss_evict_cost);

  // Far-away sets do not matter.
  auto far = b.s;
  far.partitionable.set(0)[0] = CacheEntry{0x0, 3};
  EXPECT_EQ(touch_cost(far, p, b.m), touch_cost(b.s, p, b.m));
}

TEST(Microarch, CachednessAgesWithinSet) {
  Bench b;
  const auto& g = b.m.geometry;
  const PhysAddr p{0x40};
  const PhysAddr q{0x40 + g.way_span()};
  b.read(p.value);
  b.read(q.value);
  EXPECT_EQ(b.s.partitionable.cachedness(p, g), 2);
  EXPECT_EQ(b.s.partitionable.cachedness(q, g), 1);
  EXPECT_EQ(touch_cost(b.s, p, b.m), b.m.cost.hit_cost.at(1));
}

TEST(Microarch, AdversarialMetadataIgnoresHits) {
  Bench b;
  b.m.cost.replacement = Replacement::Adversarial;
  const auto& g = b.m.geometry;
  const std::uint64_t set = 5;
  auto line = [&](std::uint64_t k) { return set * g.line_size() + k * g.way_span(); };
  for (std::uint64_t k = 0; k < 4; ++k) b.read(line(k));
  const auto meta = b.s.partitionable.meta(set);
  for (std::uint64_t k = 0; k < 4; ++k) b.read(line(3 - k));
  EXPECT_EQ(b.s.partitionable.meta(set), meta);
  // Oldest insertion goes first regardless of the re-touches.
  b.read(line(4));
  EXPECT_FALSE(b.s.partitionable.resident(PhysAddr{line(0)}, g));
  EXPECT_TRUE(b.s.partitionable.resident(PhysAddr{line(1)}, g));
}

TEST(Microarch, PlruEvictsLeastRecent) {
  Bench b;
  const auto& g = b.m.geometry;
  const std::uint64_t set = 9;
  auto line = [&](std::uint64_t k) { return set * g.line_size() + k * g.way_span(); };
  for (std::uint64_t k = 0; k < 4; ++k) b.read(line(k));
  b.read(line(0));
  b.read(line(4));
  EXPECT_TRUE(b.s.partitionable.resident(PhysAddr{line(0)}, g));
  EXPECT_EQ(b.s.partitionable.set(set).size(), 4u);
}

TEST(Microarch, ProjectionRoles) {
  Bench b;
  const auto& g = b.m.geometry;
  DomainPolicy pol;
  pol.slice_length = 1000;
  pol.domains = {DomainSpec{"a", {0}, {}, {}, {}}, DomainSpec{"b", {1}, {}, {}, {}}};
  pol.kernel_globals = {PhysAddr{0x0c00}};  // colour 0, set 48
  const DomainId a{0};
  const auto base = b.s;

  auto other = base;
  other.partitionable.set(70)[0] = CacheEntry{70 * 64, 1};  // colour 1
  EXPECT_EQ(visible_projection(base, a, pol, Role::Executing, g), visible_projection(other, a, pol, Role::Executing, g));

  auto later = base;
  later.clock += 1;
  EXPECT_NE(visible_projection(base, a, pol, Role::Executing, g), visible_projection(later, a, pol, Role::Executing, g));
  EXPECT_EQ(visible_projection(base, a, pol, Role::Suspended, g), visible_projection(later, a, pol, Role::Suspended, g));

  // Domain b suspended does not see the global set even if it were its colour;
  // here make the global collide with b's colour.
  pol.kernel_globals = {PhysAddr{0x1c00}};  // colour 1, set 112
  const DomainId bd{1};
  auto glob = base;
  glob.partitionable.set(112)[0] = CacheEntry{0x1c00, 1};
  EXPECT_EQ(visible_projection(base, bd, pol, Role::Suspended, g), visible_projection(glob, bd, pol, Role::Suspended, g));
  EXPECT_NE(visible_projection(base, bd, pol, Role::Executing, g), visible_projection(glob, bd, pol, Role::Executing, g));

  EXPECT_THROW(visible_projection(base, DomainId{5}, pol, Role::Executing, g), std::out_of_range);
}

TEST(Adherence, Examples) {
  TASet ta(4096);
  AddressMap map(4096);
  map.map_page(VirtAddr{0x10000}, PhysAddr{0x2000});
  map.map_page(VirtAddr{0x3000}, PhysAddr{0x3000});
  const std::vector<PhysAddr> globals{PhysAddr{0x3c00}};

  EXPECT_TRUE(adheres(Trace{}, ta, map, globals));
  const auto miss = adheres(Trace{Read{VirtAddr{0x10000}, PhysAddr{0x2000}}}, ta, map, globals);
  EXPECT_FALSE(miss);
  EXPECT_EQ(miss.first_offender, 0u);

  ta.insert(VirtAddr{0x10000});
  const Trace example{Read{VirtAddr{0x10040}, PhysAddr{0x2040}}, Write{VirtAddr{0x10080}, PhysAddr{0x2080}},
                      OffCoreFlush{globals}, OnCoreFlush{}, PadTo{5000}};
  EXPECT_TRUE(adheres(example, ta, map, globals));

  // Wrong translation, or a flush of an untracked page.
  EXPECT_FALSE(adheres(Trace{Read{VirtAddr{0x10040}, PhysAddr{0x9040}}}, ta, map, globals));
  const auto bad_flush = adheres(Trace{OnCoreFlush{}, OffCoreFlush{{PhysAddr{0x5000}}}}, ta, map, globals);
  EXPECT_FALSE(bad_flush);
  EXPECT_EQ(bad_flush.first_offender, 1u);
  // Globals are exempt from tracking.
  EXPECT_TRUE(adheres(Trace{Write{VirtAddr{0x3c00}, PhysAddr{0x3c00}}}, ta, map, globals));
}

TEST(TraceDump, RoundTrip) {
  const Trace t{Read{VirtAddr{0x10040}, PhysAddr{0x2040}}, Write{VirtAddr{0x1}, PhysAddr{0xff}},
                OffCoreFlush{{PhysAddr{0xc00}, PhysAddr{0x1c00}}}, OnCoreFlush{}, PadTo{12345}};
  const auto text = format_trace(t);
  EXPECT_EQ(text, "READ 0x10040 0x2040\nWRITE 0x1 0xff\nOFFFLUSH 0xc00,0x1c00\nONFLUSH\nPAD 12345\n");
  EXPECT_EQ(parse_trace(text), t);
  EXPECT_THROW(parse_op("READ 0x1"), std::invalid_argument);
  EXPECT_THROW(parse_op("PAD 0x10"), std::invalid_argument);
  EXPECT_THROW(parse_op("JUMP"), std::invalid_argument);
}

TEST(Microarch, PropertySuitesSmall) {
  const auto& cfg = tpt::reference().kernel();
  for (const auto& r : property_suites(cfg, 200, 3)) EXPECT_TRUE(r.ok()) << format_suite(r);
}
