#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "support.hpp"

using namespace tp;
using nlohmann::json;

namespace {

json reference_json() {
  std::ifstream in(tpt::config_path("reference.json"));
  return json::parse(in);
}

std::string error_field(const json& doc) {
  try {
    parse_config(doc.dump());
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "<accepted>";
}

}  // namespace

TEST(Config, ReferenceLoads) {
  const auto& cfg = tpt::reference();
  EXPECT_EQ(cfg.policy().domains.size(), 2u);
  EXPECT_EQ(cfg.machine().geometry.num_colours(), 4u);
  EXPECT_EQ(cfg.policy().kernel_globals.size(), 5u);
  EXPECT_EQ(cfg.attack.trojan, DomainId{0});
  EXPECT_EQ(cfg.attack.spy, DomainId{1});
  EXPECT_EQ(cfg.observer, DomainId{1});
  EXPECT_EQ(cfg.samples_per_symbol, 10000u);
  EXPECT_EQ(cfg.attack.scenario.kernel.policy.domains.size(), 2u);
  EXPECT_EQ(object_counts(cfg.scenario.objects, 2), (std::vector<std::uint32_t>{2, 4}));

  const auto adv = load_config(tpt::config_path("adversarial.json"));
  EXPECT_EQ(adv.machine().cost.replacement, Replacement::Adversarial);
}

TEST(Config, OverlappingColoursRejected) {
  auto doc = reference_json();
  doc["policy"]["domains"][1]["colours"] = {0, 1};
  EXPECT_EQ(error_field(doc), "policy.domains[1].colours");
}

TEST(Config, UnknownFieldNamed) {
  auto doc = reference_json();
  doc["geometry"]["num_wayz"] = 4;
  EXPECT_EQ(error_field(doc), "geometry.num_wayz");
  doc = reference_json();
  doc["policy"]["domains"][0]["colour"] = 1;
  EXPECT_EQ(error_field(doc), "policy.domains[0].colour");
}

TEST(Config, SchemaErrors) {
  auto doc = reference_json();
  doc.erase("spec_version");
  EXPECT_EQ(error_field(doc), "spec_version");
  doc = reference_json();
  doc["spec_version"] = 2;
  EXPECT_EQ(error_field(doc), "spec_version");
  doc = reference_json();
  doc["policy"]["kernel_globals"][0] = 3072;
  EXPECT_EQ(error_field(doc), "policy.kernel_globals[0]");
  doc = reference_json();
  doc["geometry"].erase("num_sets");
  EXPECT_EQ(error_field(doc), "geometry.num_sets");
  doc = reference_json();
  doc["cost_model"]["replacement"] = "lru";
  EXPECT_EQ(error_field(doc), "cost_model.replacement");
  doc = reference_json();
  doc["cost_model"]["oncore_flush_wcet"] = 10;
  EXPECT_EQ(error_field(doc), "cost_model.oncore_flush_wcet");
  doc = reference_json();
  doc["analysis"]["spy"] = "nobody";
  EXPECT_EQ(error_field(doc), "analysis.spy");
  EXPECT_THROW(parse_config("{not json"), ConfigError);
}

TEST(Config, MissingFile) {
  EXPECT_THROW(load_config(tpt::config_path("does-not-exist.json")), ConfigError);
}

TEST(Config, ExplicitObjects) {
  auto doc = reference_json();
  doc["scenario"]["objects"] = json::array({{{"owner", "trojan"}, {"va", "0x10000"}, {"size", 2048}}});
  doc["analysis"].erase("prime_objects");
  const auto cfg = parse_config(doc.dump());
  ASSERT_EQ(cfg.scenario.objects.size(), 1u);
  EXPECT_EQ(cfg.scenario.objects[0].size, 2048u);

  doc["scenario"]["objects"][0]["va"] = "0x20000";
  EXPECT_EQ(error_field(doc), "scenario.objects[0]");
}
