#pragma once

#include <string>

#include "tp/tp.hpp"

namespace tpt {

inline std::string config_path(const std::string& name) { return std::string(TP_CONFIG_DIR) + "/" + name; }

inline const tp::Config& reference() {
  static const tp::Config cfg = tp::load_config(config_path("reference.json"));
  return cfg;
}

// 64-byte lines, 256 sets, 4 ways, 4 KiB pages: four colours.
inline tp::CacheGeometry geometry_4k() { return tp::CacheGeometry::make(64, 256, 4, 4096); }

inline tp::Machine machine_4k() { return tp::Machine{geometry_4k(), tp::CostModel{}}; }

inline tp::Universe universe_pages(const tp::CacheGeometry& g, std::uint64_t pages) {
  std::vector<tp::PhysAddr> out;
  for (std::uint64_t i = 0; i < pages; ++i) out.push_back(tp::PhysAddr{i * g.page_size()});
  return tp::Universe(g, out);
}

}  // namespace tpt
