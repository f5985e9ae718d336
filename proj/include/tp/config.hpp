#pragma once

// Loader for the JSON run configuration. Every run is fully determined by
// one file plus the seed. Errors are ConfigError naming the offending field.

#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tp/channel.hpp"
#include "tp/generators.hpp"
#include "tp/kernel.hpp"
#include "tp/policy.hpp"

namespace tp {

struct Config {
  Scenario scenario;
  AttackSetup attack;  // attack.scenario mirrors `scenario`
  DomainId observer{1};
  std::size_t trials = 200;
  std::size_t samples_per_symbol = 10'000;

  const KernelConfig& kernel() const { return scenario.kernel; }
  const DomainPolicy& policy() const { return scenario.kernel.policy; }
  const Machine& machine() const { return scenario.kernel.machine; }
  const Universe& universe() const { return scenario.kernel.universe; }

  /// Re-derives everything that depends on the kernel configuration after a
  /// caller changed it (for example the replacement policy).
  void sync() { attack.scenario = scenario; }
};

namespace config_detail {

using nlohmann::json;

inline void allow_only(const json& obj, const std::string& path, std::initializer_list<const char*> keys) {
  if (!obj.is_object()) throw ConfigError(path, "expected an object");
  for (const auto& [k, v] : obj.items()) {
    bool known = false;
    for (auto allowed : keys) known = known || k == allowed;
    if (!known) throw ConfigError(path.empty() ? k : path + "." + k, "unknown field");
  }
}

inline const json& field(const json& obj, const std::string& path, const char* key) {
  if (!obj.contains(key)) throw ConfigError(path + "." + key, "missing");
  return obj.at(key);
}

inline std::uint64_t number(const json& v, const std::string& path) {
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
    throw ConfigError(path, "expected a non-negative integer");
  return v.get<std::uint64_t>();
}

inline std::uint64_t number(const json& obj, const std::string& path, const char* key) {
  return number(field(obj, path, key), path + "." + key);
}

inline std::uint64_t number_or(const json& obj, const std::string& path, const char* key, std::uint64_t fallback) {
  return obj.contains(key) ? number(obj.at(key), path + "." + key) : fallback;
}

inline std::uint64_t address(const json& v, const std::string& path) {
  if (!v.is_string()) throw ConfigError(path, "expected a hexadecimal address string");
  const auto text = v.get<std::string>();
  if (text.rfind("0x", 0) != 0 && text.rfind("0X", 0) != 0)
    throw ConfigError(path, "address '" + text + "' must be written in hexadecimal (0x...)");
  try {
    return parse_address(text);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path, e.what());
  }
}

inline std::string string(const json& obj, const std::string& path, const char* key) {
  const auto& v = field(obj, path, key);
  if (!v.is_string()) throw ConfigError(path + "." + key, "expected a string");
  return v.get<std::string>();
}

inline const json& array(const json& obj, const std::string& path, const char* key) {
  const auto& v = field(obj, path, key);
  if (!v.is_array()) throw ConfigError(path + "." + key, "expected an array");
  return v;
}

inline bool boolean_or(const json& obj, const std::string& path, const char* key, bool fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj.at(key).is_boolean()) throw ConfigError(path + "." + key, "expected true or false");
  return obj.at(key).get<bool>();
}

inline DomainId domain_named(const DomainPolicy& policy, const std::string& name, const std::string& path) {
  if (auto d = policy.find(name)) return *d;
  throw ConfigError(path, "unknown domain '" + name + "'");
}

}  // namespace config_detail

inline Replacement parse_replacement(const std::string& name, const std::string& path = "cost_model.replacement") {
  if (name == "plru") return Replacement::Plru;
  if (name == "adversarial") return Replacement::Adversarial;
  throw ConfigError(path, "unknown replacement policy '" + name + "'");
}

/// Parses and validates a configuration document.
inline Config parse_config(const std::string& text) {
  using namespace config_detail;
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<document>", e.what());
  }
  allow_only(doc, "", {"spec_version", "geometry", "cost_model", "policy", "scenario", "analysis", "comment"});
  if (!doc.contains("spec_version")) throw ConfigError("spec_version", "missing");
  if (number(doc.at("spec_version"), "spec_version") != 1) throw ConfigError("spec_version", "only version 1 is supported");

  Config cfg;
  auto& k = cfg.scenario.kernel;

  // geometry
  const auto& geo = field(doc, "", "geometry");
  allow_only(geo, "geometry", {"line_size", "num_sets", "num_ways", "page_size", "phys_base", "phys_pages"});
  CacheGeometry g = [&] {
    try {
      return CacheGeometry::make(number(geo, "geometry", "line_size"), number(geo, "geometry", "num_sets"),
                                 number(geo, "geometry", "num_ways"), number(geo, "geometry", "page_size"));
    } catch (const GeometryError& e) {
      throw ConfigError("geometry", e.what());
    }
  }();
  const auto phys_base = address(field(geo, "geometry", "phys_base"), "geometry.phys_base");
  const auto phys_pages = number(geo, "geometry", "phys_pages");
  if (phys_base % g.page_size() != 0) throw ConfigError("geometry.phys_base", "not page aligned");
  if (phys_pages == 0) throw ConfigError("geometry.phys_pages", "must be positive");
  std::vector<PhysAddr> pages;
  for (std::uint64_t i = 0; i < phys_pages; ++i) pages.push_back(PhysAddr{phys_base + i * g.page_size()});
  k.universe = Universe(g, pages);

  // cost model
  CostModel c;
  if (doc.contains("cost_model")) {
    const auto& cm = doc.at("cost_model");
    const std::string p = "cost_model";
    allow_only(cm, p,
               {"flushable_words", "max_level", "hit_cost", "miss_cost", "miss_evict_cost", "jitter_max",
                "oncore_flush_base", "oncore_flush_per_bit", "oncore_flush_wcet", "offcore_flush_base",
                "offcore_flush_per_line", "offcore_flush_wcet", "replacement"});
    c.flushable_words = number_or(cm, p, "flushable_words", c.flushable_words);
    c.max_level = static_cast<std::uint32_t>(number_or(cm, p, "max_level", c.max_level));
    if (cm.contains("hit_cost")) {
      c.hit_cost.clear();
      const auto& hc = array(cm, p, "hit_cost");
      for (std::size_t i = 0; i < hc.size(); ++i) c.hit_cost.push_back(number(hc[i], p + ".hit_cost[" + std::to_string(i) + "]"));
    }
    c.miss_cost = number_or(cm, p, "miss_cost", c.miss_cost);
    c.miss_evict_cost = number_or(cm, p, "miss_evict_cost", c.miss_evict_cost);
    c.jitter_max = number_or(cm, p, "jitter_max", c.jitter_max);
    c.oncore_flush_base = number_or(cm, p, "oncore_flush_base", c.oncore_flush_base);
    c.oncore_flush_per_bit = number_or(cm, p, "oncore_flush_per_bit", c.oncore_flush_per_bit);
    c.oncore_flush_wcet = number_or(cm, p, "oncore_flush_wcet", c.oncore_flush_wcet);
    c.offcore_flush_base = number_or(cm, p, "offcore_flush_base", c.offcore_flush_base);
    c.offcore_flush_per_line = number_or(cm, p, "offcore_flush_per_line", c.offcore_flush_per_line);
    c.offcore_flush_wcet = number_or(cm, p, "offcore_flush_wcet", c.offcore_flush_wcet);
    if (cm.contains("replacement")) c.replacement = parse_replacement(string(cm, p, "replacement"));
  }
  k.machine = Machine{g, c};
  validate_machine(k.machine);

  // policy
  const auto& pol = field(doc, "", "policy");
  allow_only(pol, "policy", {"domains", "kernel_globals", "switch_deadline", "slice_length", "dirty_phase"});
  const auto& doms = array(pol, "policy", "domains");
  for (std::size_t i = 0; i < doms.size(); ++i) {
    const std::string p = "policy.domains[" + std::to_string(i) + "]";
    const auto& d = doms[i];
    allow_only(d, p, {"name", "colours", "user_region", "kernel_image"});
    DomainSpec spec;
    spec.name = string(d, p, "name");
    if (k.policy.find(spec.name)) throw ConfigError(p + ".name", "duplicate domain name '" + spec.name + "'");
    const auto& cols = array(d, p, "colours");
    for (std::size_t j = 0; j < cols.size(); ++j) {
      const auto col = number(cols[j], p + ".colours[" + std::to_string(j) + "]");
      if (!spec.colours.insert(col).second)
        throw ConfigError(p + ".colours", "colour " + std::to_string(col) + " listed twice");
    }
    const auto& region = array(d, p, "user_region");
    for (std::size_t j = 0; j < region.size(); ++j) {
      const std::string rp = p + ".user_region[" + std::to_string(j) + "]";
      allow_only(region[j], rp, {"va", "pa"});
      const VirtAddr va{address(field(region[j], rp, "va"), rp + ".va")};
      const PhysAddr pa{address(field(region[j], rp, "pa"), rp + ".pa")};
      if (va.value % g.page_size() != 0) throw ConfigError(rp + ".va", "not page aligned");
      if (pa.value % g.page_size() != 0) throw ConfigError(rp + ".pa", "not page aligned");
      spec.user_region.push_back(PageMapping{va, pa});
    }
    if (d.contains("kernel_image")) {
      const auto& ki = d.at("kernel_image");
      const std::string kp = p + ".kernel_image";
      allow_only(ki, kp, {"va", "pages"});
      spec.kernel_image_va = VirtAddr{address(field(ki, kp, "va"), kp + ".va")};
      if (spec.kernel_image_va.value % g.page_size() != 0) throw ConfigError(kp + ".va", "not page aligned");
      const auto& kpages = array(ki, kp, "pages");
      for (std::size_t j = 0; j < kpages.size(); ++j) {
        const PhysAddr pa{address(kpages[j], kp + ".pages[" + std::to_string(j) + "]")};
        if (pa.value % g.page_size() != 0)
          throw ConfigError(kp + ".pages[" + std::to_string(j) + "]", "not page aligned");
        spec.kernel_image.push_back(pa);
      }
    }
    k.policy.domains.push_back(std::move(spec));
  }
  if (pol.contains("kernel_globals")) {
    const auto& gl = array(pol, "policy", "kernel_globals");
    for (std::size_t j = 0; j < gl.size(); ++j) {
      const auto path = "policy.kernel_globals[" + std::to_string(j) + "]";
      const PhysAddr p{address(gl[j], path)};
      if (p.value != g.line_base(p.value)) throw ConfigError(path, "not line aligned");
      k.policy.kernel_globals.push_back(p);
    }
  }
  k.policy.switch_deadline = number(pol, "policy", "switch_deadline");
  k.policy.slice_length = number(pol, "policy", "slice_length");
  k.policy.dirty_phase = boolean_or(pol, "policy", "dirty_phase", false);
  validate_policy(k.policy, g, k.universe);
  {
    // Kernel image windows must not alias user pages or each other.
    std::set<std::uint64_t> vpages;
    for (const auto& d : k.policy.domains)
      for (const auto& m : d.user_region) vpages.insert(m.va.value);
    for (std::size_t i = 0; i < k.policy.domains.size(); ++i)
      for (auto v : k.policy.domains[i].kernel_image_pages(g.page_size()))
        if (!vpages.insert(v.value).second)
          throw ConfigError("policy.domains[" + std::to_string(i) + "].kernel_image.va",
                            "window overlaps another mapping");
  }

  // scenario
  std::size_t free_pages = 2;
  bool explicit_objects = false;
  if (doc.contains("scenario")) {
    const auto& sc = doc.at("scenario");
    const std::string p = "scenario";
    allow_only(sc, p, {"trace_budget", "slices", "max_inputs", "free_pages", "objects"});
    k.trace_budget = number_or(sc, p, "trace_budget", k.trace_budget);
    if (k.trace_budget == 0) throw ConfigError(p + ".trace_budget", "must be positive");
    cfg.scenario.slices = number_or(sc, p, "slices", cfg.scenario.slices);
    cfg.scenario.max_inputs = number_or(sc, p, "max_inputs", cfg.scenario.max_inputs);
    free_pages = number_or(sc, p, "free_pages", free_pages);
    if (sc.contains("objects")) {
      explicit_objects = true;
      const auto& objs = array(sc, p, "objects");
      for (std::size_t j = 0; j < objs.size(); ++j) {
        const std::string op = p + ".objects[" + std::to_string(j) + "]";
        allow_only(objs[j], op, {"owner", "va", "size"});
        const auto owner = domain_named(k.policy, string(objs[j], op, "owner"), op + ".owner");
        const VirtAddr va{address(field(objs[j], op, "va"), op + ".va")};
        const auto size = number(objs[j], op, "size");
        if (size == 0) throw ConfigError(op + ".size", "must be positive");
        const auto& spec = k.policy.domain(owner);
        for (auto page = g.page_base(va.value); page < va.value + size; page += g.page_size()) {
          bool owned = false;
          for (const auto& m : spec.user_region) owned = owned || m.va.value == page;
          if (!owned) throw ConfigError(op, "extends outside the owner's user region");
        }
        cfg.scenario.objects.push_back(ObjectSpec{owner, va, size, {}});
      }
    }
  }
  if (!explicit_objects) cfg.scenario.objects = default_objects(k.policy, g, free_pages);

  // analysis
  auto& a = cfg.attack;
  if (doc.contains("analysis")) {
    const auto& an = doc.at("analysis");
    const std::string p = "analysis";
    allow_only(an, p,
               {"trojan", "spy", "observer", "prime_objects", "trojan_globals", "samples_per_symbol", "bin_width",
                "shuffles", "chunks", "trials"});
    if (an.contains("trojan")) a.trojan = domain_named(k.policy, string(an, p, "trojan"), p + ".trojan");
    if (an.contains("spy")) a.spy = domain_named(k.policy, string(an, p, "spy"), p + ".spy");
    if (an.contains("observer")) cfg.observer = domain_named(k.policy, string(an, p, "observer"), p + ".observer");
    if (an.contains("prime_objects")) {
      const auto& po = array(an, p, "prime_objects");
      for (std::size_t j = 0; j < po.size(); ++j)
        a.prime_objects.push_back(static_cast<std::uint32_t>(number(po[j], p + ".prime_objects[" + std::to_string(j) + "]")));
    }
    if (an.contains("trojan_globals")) {
      const auto& tg = array(an, p, "trojan_globals");
      for (std::size_t j = 0; j < tg.size(); ++j) {
        const auto idx = number(tg[j], p + ".trojan_globals[" + std::to_string(j) + "]");
        if (idx >= k.policy.kernel_globals.size() || idx >= 64)
          throw ConfigError(p + ".trojan_globals[" + std::to_string(j) + "]", "no such kernel global");
        a.trojan_global_mask |= 1ULL << idx;
      }
    }
    cfg.samples_per_symbol = number_or(an, p, "samples_per_symbol", cfg.samples_per_symbol);
    a.bin_width = number_or(an, p, "bin_width", a.bin_width);
    if (a.bin_width == 0) throw ConfigError(p + ".bin_width", "must be positive");
    a.shuffles = number_or(an, p, "shuffles", a.shuffles);
    if (a.shuffles < 100) throw ConfigError(p + ".shuffles", "at least 100 required");
    a.chunks = number_or(an, p, "chunks", a.chunks);
    if (a.chunks == 0) throw ConfigError(p + ".chunks", "must be positive");
    cfg.trials = number_or(an, p, "trials", cfg.trials);
  }
  if (!k.policy.has(cfg.observer)) cfg.observer = DomainId{0};
  if (k.policy.domains.size() < 2) a.spy = a.trojan;
  const auto counts = object_counts(cfg.scenario.objects, k.policy.domains.size());
  for (auto idx : a.prime_objects)
    if (idx >= counts.at(a.spy.value)) throw ConfigError("analysis.prime_objects", "spy has no object " + std::to_string(idx));
  cfg.sync();
  return cfg;
}

inline Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot read " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

}  // namespace tp
