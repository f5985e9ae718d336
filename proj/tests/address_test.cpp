#include <gtest/gtest.h>

#include <set>

#include "support.hpp"

using namespace tp;

TEST(Geometry, SetIndex) {
  const auto g = tpt::geometry_4k();
  EXPECT_EQ(set_index_of(PhysAddr{0}, g), 0u);
  EXPECT_EQ(set_index_of(PhysAddr{0x40}, g), 1u);
  // 0x4040 = 16448 bytes = line 257, and 257 mod 256 = 1.
  std::uint64_t line = 0;
  for (std::uint64_t a = 0; a + 64 <= 0x4040; a += 64) ++line;
  EXPECT_EQ(line % 256, 1u);
  EXPECT_EQ(set_index_of(PhysAddr{0x4040}, g), line % 256);
}

TEST(Geometry, ColourMatchesSetIndexEnumeration) {
  const auto g = tpt::geometry_4k();
  ASSERT_EQ(g.num_colours(), 4u);
  EXPECT_EQ(g.num_colours() * g.page_size(), g.line_size() * g.num_sets());
  // A page's colour is the block of 64 set indices its lines fall into.
  for (std::uint64_t page = 0; page < 16; ++page) {
    std::set<std::uint64_t> sets;
    for (std::uint64_t off = 0; off < g.page_size(); off += g.line_size())
      sets.insert(set_index_of(PhysAddr{page * g.page_size() + off}, g));
    ASSERT_EQ(sets.size(), 64u);
    const auto block = *sets.begin() / 64;
    EXPECT_EQ(colour_of(PhysAddr{page * g.page_size()}, g), block) << "page " << page;
    for (auto s : sets) EXPECT_EQ(colour_of_set(s, g), block);
  }
  EXPECT_EQ(colour_of(PhysAddr{0}, g), 0u);
  EXPECT_EQ(colour_of(PhysAddr{0x3000}, g), 3u);
  EXPECT_EQ(colour_of(PhysAddr{0x4000}, g), 0u);
}

TEST(Geometry, RejectsFractionalColours) {
  EXPECT_THROW(CacheGeometry::make(64, 16, 4, 4096), GeometryError);
  EXPECT_THROW(CacheGeometry::make(48, 64, 4, 1024), GeometryError);
  EXPECT_THROW(CacheGeometry::make(64, 64, 0, 1024), GeometryError);
  EXPECT_THROW(CacheGeometry::make(64, 64, 4, 32), GeometryError);
  EXPECT_NO_THROW(CacheGeometry::make(64, 64, 3, 1024));
}

TEST(Geometry, CollisionSet) {
  const auto g = tpt::geometry_4k();
  const PhysAddr p{0x1240};
  std::vector<PhysAddr> single{p};
  EXPECT_EQ(collision_set_of(p, g, single), single);

  // One full page: every line has its own set, so only p collides.
  std::vector<PhysAddr> page;
  for (std::uint64_t off = 0; off < g.page_size(); off += g.line_size()) page.push_back(PhysAddr{0x1000 + off});
  std::vector<PhysAddr> expect;
  for (auto q : page)
    if (set_index_of(q, g) == set_index_of(p, g)) expect.push_back(q);
  EXPECT_EQ(collision_set_of(p, g, page), expect);
  EXPECT_EQ(expect.size(), 1u);

  const PhysAddr far{p.value + g.way_span() * 3};
  std::vector<PhysAddr> both{p, far};
  EXPECT_EQ(collision_set_of(p, g, both), both);
  EXPECT_EQ(collision_set_of(far, g, both), both);
}

TEST(Translation, OffsetPreservedAndFaults) {
  AddressMap identity(4096);
  identity.map_page(VirtAddr{0x1000}, PhysAddr{0x1000});
  EXPECT_EQ(translate(identity, VirtAddr{0x1234}), PhysAddr{0x1234});

  AddressMap m(4096);
  m.map_page(VirtAddr{0x1000}, PhysAddr{0x7000});
  EXPECT_EQ(translate(m, VirtAddr{0x1234}), PhysAddr{0x7234});
  EXPECT_THROW(translate(m, VirtAddr{0x2000}), TranslationFault);
  EXPECT_THROW(m.map_page(VirtAddr{0x1001}, PhysAddr{0x7000}), std::invalid_argument);
}

TEST(TASetTest, PageGranular) {
  TASet ta(1024);
  ta.insert_range(VirtAddr{0x1100}, 0x400);
  EXPECT_EQ(ta.size(), 2u);
  EXPECT_TRUE(ta.contains(VirtAddr{0x1000}));
  EXPECT_TRUE(ta.contains(VirtAddr{0x14ff}));
  EXPECT_FALSE(ta.contains(VirtAddr{0x1800}));
  TASet sub(1024);
  sub.insert(VirtAddr{0x1010});
  EXPECT_TRUE(ta.includes(sub));
  EXPECT_FALSE(sub.includes(ta));
}

namespace {

DomainPolicy two_domain_policy(const CacheGeometry& g) {
  DomainPolicy p;
  p.slice_length = 1000;
  p.switch_deadline = 100;
  DomainSpec a{"a", {0}, {{VirtAddr{0x10000}, PhysAddr{0x0}}}, VirtAddr{0x80000}, {PhysAddr{0x4000}}};
  DomainSpec b{"b", {1}, {{VirtAddr{0x20000}, PhysAddr{0x1000}}}, VirtAddr{0x90000}, {PhysAddr{0x5000}}};
  p.domains = {a, b};
  p.kernel_globals = {PhysAddr{0x3c00}};
  (void)g;
  return p;
}

}  // namespace

TEST(Policy, ValidAndSharedColourRejected) {
  const auto g = tpt::geometry_4k();
  const auto u = tpt::universe_pages(g, 8);
  auto p = two_domain_policy(g);
  EXPECT_NO_THROW(validate_policy(p, g, u));

  auto shared = p;
  shared.domains[1].colours.insert(0);
  try {
    validate_policy(shared, g, u);
    FAIL() << "shared colour accepted";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "policy.domains[1].colours");
  }

  auto foreign = p;
  foreign.domains[0].user_region[0].pa = PhysAddr{0x1000 * 2};  // colour 2
  EXPECT_THROW(validate_policy(foreign, g, u), ConfigError);

  auto global_in_user = p;
  global_in_user.kernel_globals = {PhysAddr{0x40}};
  EXPECT_THROW(validate_policy(global_in_user, g, u), ConfigError);
}

TEST(Policy, AddressMapCoversRegionsImagesAndGlobals) {
  const auto g = tpt::geometry_4k();
  const auto p = two_domain_policy(g);
  const auto map = build_address_map(p, g);
  EXPECT_EQ(map.translate(VirtAddr{0x20010}), PhysAddr{0x1010});
  EXPECT_EQ(map.translate(VirtAddr{0x90000}), PhysAddr{0x5000});
  EXPECT_EQ(map.translate(VirtAddr{0x3c00}), PhysAddr{0x3c00});
  EXPECT_EQ(p.global_sets(g), (std::set<std::uint64_t>{set_index_of(PhysAddr{0x3c00}, g)}));
}
