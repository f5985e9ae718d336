#include <gtest/gtest.h>

#include "support.hpp"

using namespace tp;

namespace {

struct Env {
  const KernelConfig& cfg = tpt::reference().kernel();
  const CacheGeometry& g = cfg.geometry();
  AddressMap map = build_address_map(cfg.policy, g);
  DomainId d{0};

  VisibleProjection visible(const MicroArchState& s) const {
    return visible_projection(s, d, cfg.policy, Role::Executing, g);
  }
};

}  // namespace

TEST(Selector, EmptyTaGivesEmptyTrace) {
  Env e;
  const auto s = MicroArchState::initial(e.cfg.machine);
  EXPECT_TRUE(select_trace(TASet(e.g.page_size()), e.visible(s), e.map, e.g, 8, 1).empty());
}

TEST(Selector, SingleAddressTa) {
  Env e;
  const auto s = MicroArchState::initial(e.cfg.machine);
  const auto v = e.cfg.policy.domains[0].user_region[0].va;
  TASet ta(e.g.page_size());
  ta.insert(v);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto t = select_trace(ta, e.visible(s), e.map, e.g, 3, seed);
    EXPECT_LE(t.size(), 3u);
    for (const auto& op : t) {
      VirtAddr used{};
      if (auto r = std::get_if<Read>(&op)) used = r->v;
      else if (auto w = std::get_if<Write>(&op)) used = w->v;
      else FAIL() << "non-access op in user trace";
      EXPECT_TRUE(ta.contains(used));
    }
    EXPECT_TRUE(adheres(t, ta, e.map));
  }
}

TEST(Selector, Deterministic) {
  Env e;
  Rng rng(4);
  const auto s = random_state(e.cfg.machine, e.cfg.universe, rng);
  TASet ta(e.g.page_size());
  for (const auto& m : e.cfg.policy.domains[0].user_region) ta.insert(m.va);
  EXPECT_EQ(select_trace(ta, e.visible(s), e.map, e.g, 40, 9), select_trace(ta, e.visible(s), e.map, e.g, 40, 9));
}

TEST(Selector, CoversReorderingsRepetitionsSubsetsAndFlushes) {
  Env e;
  const auto s = MicroArchState::initial(e.cfg.machine);
  TASet ta(e.g.page_size());
  ta.insert(e.cfg.policy.domains[0].user_region[0].va);
  const auto lines = e.g.page_size() / e.g.line_size();
  bool reordered = false, repeated = false, subset = false, onflush = false, offflush = false, pad = false;
  for (std::uint64_t seed = 0; seed < 400; ++seed) {
    const auto t = select_trace(ta, e.visible(s), e.map, e.g, 200, seed, SelectorOptions{true, true});
    EXPECT_TRUE(adheres(t, ta, e.map));
    std::vector<std::uint64_t> order;
    for (const auto& op : t) {
      if (auto r = std::get_if<Read>(&op)) order.push_back(r->v.value);
      if (auto w = std::get_if<Write>(&op)) order.push_back(w->v.value);
      onflush |= std::holds_alternative<OnCoreFlush>(op);
      offflush |= std::holds_alternative<OffCoreFlush>(op);
      pad |= std::holds_alternative<PadTo>(op);
    }
    std::set<std::uint64_t> distinct(order.begin(), order.end());
    reordered |= !std::is_sorted(order.begin(), order.end());
    repeated |= distinct.size() < order.size();
    subset |= distinct.size() < lines;
  }
  EXPECT_TRUE(reordered);
  EXPECT_TRUE(repeated);
  EXPECT_TRUE(subset);
  EXPECT_TRUE(onflush);
  EXPECT_TRUE(offflush);
  EXPECT_TRUE(pad);
}

TEST(Selector, PerturbInvisiblePreservesProjection) {
  Env e;
  Rng rng(11);
  const auto s = random_state(e.cfg.machine, e.cfg.universe, rng);
  const auto t = perturb_invisible(s, e.d, e.cfg.policy, e.cfg.machine, e.cfg.universe, 5);
  EXPECT_EQ(e.visible(s), e.visible(t));
  EXPECT_NE(s.partitionable, t.partitionable);
  EXPECT_EQ(s.flushable, t.flushable);
  EXPECT_EQ(s.clock, t.clock);
}

TEST(Selector, PerturbInvisibleSingleDomainIsIdentity) {
  const auto m = tpt::machine_4k();
  const auto u = tpt::universe_pages(m.geometry, 8);
  DomainPolicy pol;
  pol.slice_length = 1000;
  pol.domains = {DomainSpec{"only", {0, 1, 2, 3}, {}, {}, {}}};
  Rng rng(2);
  const auto s = random_state(m, u, rng);
  EXPECT_EQ(perturb_invisible(s, DomainId{0}, pol, m, u, 3), s);
}

TEST(Selector, DependencySuiteAndPeek) {
  auto cfg = tpt::reference().kernel();
  EXPECT_TRUE(selector_dependency(cfg, 300, 1).ok());
  EXPECT_TRUE(selector_adherence(cfg, 300, 1).ok());
  cfg.selector = SelectorMode::Peek;
  EXPECT_FALSE(selector_dependency(cfg, 300, 1).ok());
}
