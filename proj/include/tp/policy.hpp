#pragma once

// Security policy: which colours, pages and kernel image each domain owns.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "tp/address.hpp"

namespace tp {

class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& what)
      : std::invalid_argument(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct PageMapping {
  VirtAddr va;
  PhysAddr pa;
};

struct DomainSpec {
  std::string name;
  std::set<std::uint64_t> colours;
  std::vector<PageMapping> user_region;  // page mappings of user-controlled memory
  VirtAddr kernel_image_va;              // kernel window of this domain's image
  std::vector<PhysAddr> kernel_image;    // physical pages, mapped contiguously at kernel_image_va

  std::vector<VirtAddr> kernel_image_pages(std::uint64_t page_size) const {
    std::vector<VirtAddr> out;
    for (std::size_t i = 0; i < kernel_image.size(); ++i)
      out.push_back(VirtAddr{kernel_image_va.value + i * page_size});
    return out;
  }
};

struct DomainPolicy {
  std::vector<DomainSpec> domains;
  /// Line addresses of shared kernel data. Mapped identity (va == pa).
  std::vector<PhysAddr> kernel_globals;
  /// Length of the switch window, measured from the timer tick.
  Cycles switch_deadline = 0;
  Cycles slice_length = 0;
  bool dirty_phase = false;

  std::size_t index_of(DomainId d) const {
    if (d.value >= domains.size()) throw std::out_of_range("unknown domain " + std::to_string(d.value));
    return d.value;
  }
  bool has(DomainId d) const { return d.value < domains.size(); }
  const DomainSpec& domain(DomainId d) const { return domains.at(index_of(d)); }
  std::optional<DomainId> find(const std::string& name) const {
    for (std::size_t i = 0; i < domains.size(); ++i)
      if (domains[i].name == name) return DomainId{static_cast<std::uint32_t>(i)};
    return std::nullopt;
  }

  /// Cache sets that some kernel global maps into.
  std::set<std::uint64_t> global_sets(const CacheGeometry& g) const {
    std::set<std::uint64_t> out;
    for (auto p : kernel_globals) out.insert(set_index_of(p, g));
    return out;
  }

  /// Sets whose colour belongs to `d`.
  std::set<std::uint64_t> colour_sets(DomainId d, const CacheGeometry& g) const {
    std::set<std::uint64_t> out;
    const auto& spec = domain(d);
    for (std::uint64_t s = 0; s < g.num_sets(); ++s)
      if (spec.colours.contains(colour_of_set(s, g))) out.insert(s);
    return out;
  }
};

/// Builds the page table implied by the policy: user regions, kernel image
/// windows and identity mappings for the pages holding kernel globals.
inline AddressMap build_address_map(const DomainPolicy& policy, const CacheGeometry& g) {
  AddressMap map(g.page_size());
  for (const auto& d : policy.domains) {
    for (const auto& m : d.user_region) map.map_page(m.va, m.pa);
    auto kpages = d.kernel_image_pages(g.page_size());
    for (std::size_t i = 0; i < kpages.size(); ++i) map.map_page(kpages[i], d.kernel_image[i]);
  }
  for (auto gl : policy.kernel_globals) {
    auto page = g.page_base(gl.value);
    map.map_page(VirtAddr{page}, PhysAddr{page});
  }
  return map;
}

/// Rejects policies that break colouring. Throws ConfigError naming the field.
inline void validate_policy(const DomainPolicy& policy, const CacheGeometry& g,
                            const Universe& universe) {
  if (policy.domains.empty()) throw ConfigError("policy.domains", "at least one domain required");
  if (policy.slice_length == 0) throw ConfigError("policy.slice_length", "must be positive");

  std::set<std::uint64_t> seen_colours;
  std::set<std::uint64_t> user_phys_pages;
  std::set<std::uint64_t> user_virt_pages;
  for (std::size_t i = 0; i < policy.domains.size(); ++i) {
    const auto& d = policy.domains[i];
    const std::string base = "policy.domains[" + std::to_string(i) + "]";
    for (auto c : d.colours) {
      if (c >= g.num_colours())
        throw ConfigError(base + ".colours", "colour " + std::to_string(c) + " out of range");
      if (!seen_colours.insert(c).second)
        throw ConfigError(base + ".colours",
                          "colour " + std::to_string(c) + " is shared with another domain");
    }
    for (const auto& m : d.user_region) {
      if (!universe.contains_page(m.pa))
        throw ConfigError(base + ".user_region", hex(m.pa.value) + " outside physical memory");
      if (!d.colours.contains(colour_of(m.pa, g)))
        throw ConfigError(base + ".user_region",
                          hex(m.pa.value) + " has colour " + std::to_string(colour_of(m.pa, g)) +
                              " not owned by the domain");
      if (!user_phys_pages.insert(m.pa.value).second)
        throw ConfigError(base + ".user_region", hex(m.pa.value) + " mapped twice");
      if (!user_virt_pages.insert(m.va.value).second)
        throw ConfigError(base + ".user_region", hex(m.va.value) + " virtual page reused");
    }
    for (auto p : d.kernel_image) {
      if (!universe.contains_page(p))
        throw ConfigError(base + ".kernel_image", hex(p.value) + " outside physical memory");
      if (!d.colours.contains(colour_of(p, g)))
        throw ConfigError(base + ".kernel_image",
                          hex(p.value) + " has colour " + std::to_string(colour_of(p, g)) +
                              " not owned by the domain");
    }
  }
  for (auto gl : policy.kernel_globals) {
    if (!universe.contains(gl))
      throw ConfigError("policy.kernel_globals", hex(gl.value) + " outside physical memory");
    if (user_phys_pages.contains(g.page_base(gl.value)))
      throw ConfigError("policy.kernel_globals",
                        hex(gl.value) + " overlaps a user region translation");
    if (user_virt_pages.contains(g.page_base(gl.value)))
      throw ConfigError("policy.kernel_globals",
                        hex(gl.value) + " identity window collides with a user virtual page");
  }
}

}  // namespace tp
