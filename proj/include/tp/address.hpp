#pragma once

// Address arithmetic, cache geometry, colouring and page-granular translation.

#include <algorithm>
#include <bit>
#include <compare>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tp {

using Cycles = std::uint64_t;

struct PhysAddr {
  std::uint64_t value = 0;
  auto operator<=>(const PhysAddr&) const = default;
};

struct VirtAddr {
  std::uint64_t value = 0;
  auto operator<=>(const VirtAddr&) const = default;
};

inline std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << "0x" << std::hex << v;
  return os.str();
}

/// Parses "0x1f00" or a plain decimal string. Throws std::invalid_argument.
inline std::uint64_t parse_address(const std::string& text) {
  if (text.empty()) throw std::invalid_argument("empty address");
  std::size_t used = 0;
  std::uint64_t value = 0;
  try {
    value = std::stoull(text, &used, 0);
  } catch (const std::exception&) {
    throw std::invalid_argument("malformed address '" + text + "'");
  }
  if (used != text.size() || text.front() == '-')
    throw std::invalid_argument("malformed address '" + text + "'");
  return value;
}

class GeometryError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Set-associative cache geometry plus the page size used for colouring.
///
/// The colour bits are the overlap of the set-index bits and the physical
/// page-number bits, so a geometry is only accepted when one cache way spans
/// a whole number of pages.
class CacheGeometry {
 public:
  static CacheGeometry make(std::uint64_t line_size, std::uint64_t num_sets,
                            std::uint64_t num_ways, std::uint64_t page_size) {
    auto pow2 = [](std::uint64_t v) { return v != 0 && std::has_single_bit(v); };
    if (!pow2(line_size)) throw GeometryError("line_size must be a power of two");
    if (!pow2(num_sets)) throw GeometryError("num_sets must be a power of two");
    if (num_ways < 1) throw GeometryError("num_ways must be at least 1");
    if (!pow2(page_size)) throw GeometryError("page_size must be a power of two");
    if (page_size < line_size) throw GeometryError("page_size must be >= line_size");
    if (line_size * num_sets < page_size)
      throw GeometryError("line_size * num_sets must be >= page_size");
    return CacheGeometry(line_size, num_sets, num_ways, page_size);
  }

  /// 64-byte lines, 64 sets, 4 ways, 1 KiB pages.
  CacheGeometry() : CacheGeometry(64, 64, 4, 1024) {}

  std::uint64_t line_size() const { return line_size_; }
  std::uint64_t num_sets() const { return num_sets_; }
  std::uint64_t num_ways() const { return num_ways_; }
  std::uint64_t page_size() const { return page_size_; }
  std::uint64_t num_colours() const { return line_size_ * num_sets_ / page_size_; }
  std::uint64_t lines_per_page() const { return page_size_ / line_size_; }
  /// Bytes covered by one way: addresses this far apart collide.
  std::uint64_t way_span() const { return line_size_ * num_sets_; }

  std::uint64_t line_base(std::uint64_t addr) const { return addr & ~(line_size_ - 1); }
  std::uint64_t page_base(std::uint64_t addr) const { return addr & ~(page_size_ - 1); }

  bool operator==(const CacheGeometry&) const = default;

 private:
  CacheGeometry(std::uint64_t l, std::uint64_t s, std::uint64_t w, std::uint64_t p)
      : line_size_(l), num_sets_(s), num_ways_(w), page_size_(p) {}

  std::uint64_t line_size_;
  std::uint64_t num_sets_;
  std::uint64_t num_ways_;
  std::uint64_t page_size_;
};

inline std::uint64_t set_index_of(PhysAddr p, const CacheGeometry& g) {
  return (p.value / g.line_size()) % g.num_sets();
}

inline std::uint64_t colour_of(PhysAddr p, const CacheGeometry& g) {
  return (p.value / g.page_size()) % g.num_colours();
}

/// Colour shared by every address indexing into `set`.
inline std::uint64_t colour_of_set(std::uint64_t set, const CacheGeometry& g) {
  return set * g.line_size() / g.page_size();
}

/// All members of `universe` that index into the same cache set as `p`.
/// The result is sorted and always contains `p`.
inline std::vector<PhysAddr> collision_set_of(PhysAddr p, const CacheGeometry& g,
                                              std::span<const PhysAddr> universe) {
  const auto target = set_index_of(p, g);
  std::vector<PhysAddr> out;
  for (PhysAddr q : universe)
    if (set_index_of(q, g) == target) out.push_back(q);
  if (std::find(out.begin(), out.end(), p) == out.end()) out.push_back(p);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

/// The declared physical memory: a finite set of pages.
class Universe {
 public:
  Universe() = default;
  Universe(const CacheGeometry& g, std::vector<PhysAddr> pages) : page_size_(g.page_size()) {
    for (auto p : pages) {
      if (p.value % g.page_size() != 0)
        throw GeometryError("physical page " + hex(p.value) + " is not page aligned");
    }
    std::sort(pages.begin(), pages.end());
    pages.erase(std::unique(pages.begin(), pages.end()), pages.end());
    pages_ = std::move(pages);
    lines_by_set_.assign(g.num_sets(), {});
    for (auto page : pages_)
      for (std::uint64_t off = 0; off < g.page_size(); off += g.line_size()) {
        PhysAddr line{page.value + off};
        lines_.push_back(line);
        lines_by_set_[set_index_of(line, g)].push_back(line);
      }
  }

  const std::vector<PhysAddr>& pages() const { return pages_; }
  /// Every line-aligned address in the universe, ascending.
  const std::vector<PhysAddr>& lines() const { return lines_; }
  const std::vector<PhysAddr>& lines_in_set(std::uint64_t set) const {
    return lines_by_set_.at(set);
  }
  bool contains_page(PhysAddr page) const {
    return std::binary_search(pages_.begin(), pages_.end(), page);
  }
  bool contains(PhysAddr p) const {
    return page_size_ != 0 && contains_page(PhysAddr{p.value & ~(page_size_ - 1)});
  }

 private:
  std::uint64_t page_size_ = 0;
  std::vector<PhysAddr> pages_;
  std::vector<PhysAddr> lines_;
  std::vector<std::vector<PhysAddr>> lines_by_set_;
};

class TranslationFault : public std::runtime_error {
 public:
  explicit TranslationFault(VirtAddr v)
      : std::runtime_error("translation fault at " + hex(v.value)), address(v) {}
  VirtAddr address;
};

/// Single-level page table: page-aligned VirtAddr -> page-aligned PhysAddr.
class AddressMap {
 public:
  AddressMap() = default;
  explicit AddressMap(std::uint64_t page_size) : page_size_(page_size) {}

  void map_page(VirtAddr vpage, PhysAddr ppage) {
    if (vpage.value % page_size_ != 0 || ppage.value % page_size_ != 0)
      throw std::invalid_argument("unaligned mapping " + hex(vpage.value) + " -> " +
                                  hex(ppage.value));
    pages_[vpage.value] = ppage.value;
  }

  bool is_mapped(VirtAddr v) const { return pages_.contains(v.value & ~(page_size_ - 1)); }

  PhysAddr translate(VirtAddr v) const {
    auto it = pages_.find(v.value & ~(page_size_ - 1));
    if (it == pages_.end()) throw TranslationFault(v);
    return PhysAddr{it->second + (v.value & (page_size_ - 1))};
  }

  std::uint64_t page_size() const { return page_size_; }
  const std::map<std::uint64_t, std::uint64_t>& entries() const { return pages_; }

  bool operator==(const AddressMap&) const = default;

 private:
  std::uint64_t page_size_ = 4096;
  std::map<std::uint64_t, std::uint64_t> pages_;
};

inline PhysAddr translate(const AddressMap& map, VirtAddr v) { return map.translate(v); }

/// Touched-address set, kept at page granularity: whole objects are tracked,
/// so membership of any byte implies membership of its page.
class TASet {
 public:
  TASet() = default;
  explicit TASet(std::uint64_t page_size) : page_size_(page_size) {}

  void insert(VirtAddr v) { pages_.insert(v.value & ~(page_size_ - 1)); }
  void insert_range(VirtAddr base, std::uint64_t size) {
    if (size == 0) return;
    for (auto p = base.value & ~(page_size_ - 1); p < base.value + size; p += page_size_)
      pages_.insert(p);
  }
  bool contains(VirtAddr v) const { return pages_.contains(v.value & ~(page_size_ - 1)); }
  bool includes(const TASet& other) const {
    return std::includes(pages_.begin(), pages_.end(), other.pages_.begin(), other.pages_.end());
  }
  void clear() { pages_.clear(); }
  bool empty() const { return pages_.empty(); }
  std::size_t size() const { return pages_.size(); }
  std::uint64_t page_size() const { return page_size_; }
  const std::set<std::uint64_t>& pages() const { return pages_; }

  bool operator==(const TASet&) const = default;

 private:
  std::uint64_t page_size_ = 4096;
  std::set<std::uint64_t> pages_;
};

struct DomainId {
  std::uint32_t value = 0;
  /// The kernel acting between domains during a switch.
  static constexpr DomainId kernel() { return DomainId{0xffffffffu}; }
  auto operator<=>(const DomainId&) const = default;
};

}  // namespace tp
