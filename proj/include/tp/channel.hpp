#pragma once

// Prime-and-probe harness, channel matrices, plug-in mutual information and
// the shuffled-label baseline M0.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "tp/generators.hpp"
#include "tp/kernel.hpp"

namespace tp {

struct Sample {
  std::uint64_t symbol = 0;
  Cycles latency = 0;
};

/// Latency histogram per Trojan symbol. Only occupied bins are kept; bin k
/// covers [bins[k], bins[k] + bin_width).
struct ChannelMatrix {
  std::vector<std::uint64_t> inputs;
  std::vector<Cycles> bins;
  Cycles bin_width = 1;
  std::vector<std::vector<std::uint64_t>> counts;  // inputs x bins

  std::uint64_t total() const {
    std::uint64_t n = 0;
    for (const auto& row : counts)
      for (auto c : row) n += c;
    return n;
  }
  std::uint64_t row_sum(std::size_t i) const {
    std::uint64_t n = 0;
    for (auto c : counts.at(i)) n += c;
    return n;
  }
  bool operator==(const ChannelMatrix&) const = default;
};

inline ChannelMatrix build_matrix(const std::vector<Sample>& samples, Cycles bin_width = 1) {
  if (bin_width == 0) throw std::invalid_argument("bin width must be positive");
  ChannelMatrix m;
  m.bin_width = bin_width;
  std::map<std::uint64_t, std::size_t> rows;
  std::map<Cycles, std::size_t> cols;
  for (const auto& s : samples) {
    rows.emplace(s.symbol, 0);
    cols.emplace(s.latency / bin_width * bin_width, 0);
  }
  for (auto& [sym, idx] : rows) {
    idx = m.inputs.size();
    m.inputs.push_back(sym);
  }
  for (auto& [edge, idx] : cols) {
    idx = m.bins.size();
    m.bins.push_back(edge);
  }
  m.counts.assign(m.inputs.size(), std::vector<std::uint64_t>(m.bins.size(), 0));
  for (const auto& s : samples) ++m.counts[rows[s.symbol]][cols[s.latency / bin_width * bin_width]];
  return m;
}

/// Plug-in estimate of I(X;Y) in bits from a joint count table, with
/// 0 log 0 = 0. Throws std::invalid_argument for an empty table.
inline double mutual_information(const std::vector<std::vector<std::uint64_t>>& counts) {
  std::uint64_t n = 0;
  std::vector<std::uint64_t> col;
  for (const auto& row : counts) {
    if (row.size() > col.size()) col.resize(row.size(), 0);
    for (std::size_t j = 0; j < row.size(); ++j) {
      col[j] += row[j];
      n += row[j];
    }
  }
  if (n == 0) throw std::invalid_argument("empty channel matrix");
  double mi = 0;
  for (const auto& row : counts) {
    std::uint64_t r = 0;
    for (auto c : row) r += c;
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (row[j] == 0) continue;
      const double ratio = static_cast<double>(row[j] * n) / static_cast<double>(r * col[j]);
      mi += static_cast<double>(row[j]) / static_cast<double>(n) * std::log2(ratio);
    }
  }
  return std::max(0.0, mi);
}

inline double mutual_information(const ChannelMatrix& m) { return mutual_information(m.counts); }

/// Linear interpolation between order statistics; q in [0, 1].
inline double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile of nothing");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

struct ApparentCapacity {
  double mean = 0;
  double lo = 0;  // 2.5th percentile
  double hi = 0;  // 97.5th percentile
  std::size_t shuffles = 0;
};

/// MI of the matrix with its sample labels randomly permuted, which keeps
/// both marginals and destroys any input/latency association.
inline ApparentCapacity apparent_capacity(const ChannelMatrix& m, std::size_t shuffles, std::uint64_t seed) {
  if (shuffles < 100) throw std::invalid_argument("at least 100 shuffles required");
  if (m.total() == 0) throw std::invalid_argument("empty channel matrix");
  std::vector<std::uint32_t> labels, cols;
  for (std::size_t i = 0; i < m.counts.size(); ++i)
    for (std::size_t j = 0; j < m.counts[i].size(); ++j)
      for (std::uint64_t k = 0; k < m.counts[i][j]; ++k) {
        labels.push_back(static_cast<std::uint32_t>(i));
        cols.push_back(static_cast<std::uint32_t>(j));
      }
  Rng rng(hash_combine(seed, 0x4d30));
  std::vector<double> values;
  values.reserve(shuffles);
  std::vector<std::vector<std::uint64_t>> counts;
  for (std::size_t s = 0; s < shuffles; ++s) {
    std::shuffle(labels.begin(), labels.end(), rng);
    counts.assign(m.counts.size(), std::vector<std::uint64_t>(m.bins.size(), 0));
    for (std::size_t k = 0; k < labels.size(); ++k) ++counts[labels[k]][cols[k]];
    values.push_back(mutual_information(counts));
  }
  ApparentCapacity out;
  out.shuffles = shuffles;
  for (auto v : values) out.mean += v;
  out.mean /= static_cast<double>(values.size());
  out.lo = percentile(values, 0.025);
  out.hi = percentile(values, 0.975);
  return out;
}

struct CapacityReport {
  double m_bits = 0;
  double m0_bits = 0;
  double m0_lo = 0;
  double m0_hi = 0;
  std::uint64_t samples = 0;
  std::size_t shuffles = 0;

  /// M is indistinguishable from sampling noise.
  bool within_m0() const { return m_bits <= m0_hi; }
};

inline CapacityReport capacity_report(const ChannelMatrix& m, std::size_t shuffles, std::uint64_t seed) {
  const auto m0 = apparent_capacity(m, shuffles, seed);
  return CapacityReport{mutual_information(m), m0.mean, m0.lo, m0.hi, m.total(), shuffles};
}

inline std::string format_report(const CapacityReport& r, const std::string& prefix = "") {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed;
  os << prefix << "samples=" << r.samples << "\n"
     << prefix << "M_bits=" << r.m_bits << "\n"
     << prefix << "M_millibits=" << r.m_bits * 1000 << "\n"
     << prefix << "M0_bits=" << r.m0_bits << "\n"
     << prefix << "M0_ci95_lo=" << r.m0_lo << "\n"
     << prefix << "M0_ci95_hi=" << r.m0_hi << "\n"
     << prefix << "shuffles=" << r.shuffles << "\n"
     << prefix << "channel=" << (r.within_m0() ? "closed" : "open") << "\n";
  return os.str();
}

/// Header row of bin lower edges, then one row per symbol (symbol first).
inline std::string to_csv(const ChannelMatrix& m) {
  std::ostringstream os;
  os << "symbol";
  for (auto e : m.bins) os << ',' << e;
  os << '\n';
  for (std::size_t i = 0; i < m.inputs.size(); ++i) {
    os << m.inputs[i];
    for (auto c : m.counts[i]) os << ',' << c;
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Attack harness

enum class Protection {
  On,            // per-domain kernel images and the full mechanism
  Off,           // every domain runs on one shared kernel image
  Prefetch,      // kernel-global channel; globals prefetched instead of flushed
  TargetedFlush  // kernel-global channel; globals flushed
};

inline const char* to_string(Protection p) {
  switch (p) {
    case Protection::On: return "on";
    case Protection::Off: return "off";
    case Protection::Prefetch: return "prefetch";
    case Protection::TargetedFlush: return "targeted-flush";
  }
  return "?";
}

inline std::optional<Protection> parse_protection(const std::string& s) {
  for (auto p : {Protection::On, Protection::Off, Protection::Prefetch, Protection::TargetedFlush})
    if (s == to_string(p)) return p;
  return std::nullopt;
}

struct AttackSetup {
  Scenario scenario;
  DomainId trojan{0};
  DomainId spy{1};
  std::vector<std::uint32_t> prime_objects;  // spy objects swept after each probe
  std::uint64_t trojan_global_mask = 0;      // globals the Trojan touches to send a 1
  Cycles bin_width = 1;
  std::size_t shuffles = 200;
  std::size_t chunks = 8;  // independent runs the samples are split over
};

/// Kernel configuration for a protection mode.
inline KernelConfig protection_config(const AttackSetup& setup, Protection p) {
  auto cfg = setup.scenario.kernel;
  cfg.record_states = false;
  switch (p) {
    case Protection::On:
    case Protection::TargetedFlush:
      break;
    case Protection::Off: {
      const auto shared = cfg.policy.domain(setup.spy).kernel_image;
      for (auto& d : cfg.policy.domains) d.kernel_image = shared;
      break;
    }
    case Protection::Prefetch:
      cfg.mechanism.prefetch_globals = true;
      break;
  }
  return cfg;
}

/// Equal numbers of each symbol in a random order.
inline std::vector<std::uint64_t> balanced_bits(std::size_t samples_per_symbol, std::uint64_t seed) {
  std::vector<std::uint64_t> bits(2 * samples_per_symbol, 0);
  std::fill(bits.begin() + static_cast<std::ptrdiff_t>(samples_per_symbol), bits.end(), 1);
  Rng rng(hash_combine(seed, 0x62697473));
  std::shuffle(bits.begin(), bits.end(), rng);
  return bits;
}

namespace detail {

inline bool global_channel(Protection p) { return p == Protection::Prefetch || p == Protection::TargetedFlush; }

/// One independent run sending `bits`; returns one sample per bit.
inline std::vector<Sample> attack_chunk(const AttackSetup& setup, const KernelConfig& cfg, Protection p,
                                        const std::vector<std::uint64_t>& bits, std::uint64_t seed) {
  const auto n = cfg.policy.domains.size();
  const auto all_globals = cfg.policy.kernel_globals.size() >= 64
                               ? ~0ULL
                               : (1ULL << cfg.policy.kernel_globals.size()) - 1;
  const KernelCall send = global_channel(p)
                              ? KernelCall{.kind = SyscallKind::TouchGlobals, .global_mask = setup.trojan_global_mask}
                              : KernelCall{.kind = SyscallKind::TouchImage};
  const KernelCall probe = global_channel(p)
                               ? KernelCall{.kind = SyscallKind::TouchGlobals, .global_mask = all_globals}
                               : KernelCall{.kind = SyscallKind::TouchImage};

  // The spy's r-th probe sees the Trojan's r-th symbol when the Trojan runs
  // first in the round, otherwise the one from the previous round.
  const std::size_t lag = setup.trojan.value < setup.spy.value ? 0 : 1;
  const std::size_t rounds = bits.size() + lag;
  Schedule schedule;
  schedule.num_slices = rounds * n;
  schedule.slices.assign(n, std::vector<std::vector<Input>>(rounds));
  for (std::size_t r = 0; r < bits.size(); ++r)
    if (bits[r]) schedule.slices[setup.trojan.value][r].push_back(send);
  for (std::size_t r = 0; r < rounds; ++r) {
    auto& slot = schedule.slices[setup.spy.value][r];
    slot.push_back(probe);
    slot.push_back(UserStep{setup.prime_objects});
  }

  Runner runner(cfg, boot(cfg, setup.scenario.objects), std::move(schedule), NondetOracle(hash_combine(seed, 0x6f)),
                hash_combine(seed, 0x73), true);
  std::vector<Sample> out;
  out.reserve(bits.size());
  std::size_t probes = 0;
  while (!runner.done()) {
    const auto rec = runner.advance();
    if (rec.domain != setup.spy || rec.kind != RecordKind::KernelCall) continue;
    const auto r = probes++;
    if (r >= lag && r - lag < bits.size()) out.push_back(Sample{bits[r - lag], rec.clock_delta()});
  }
  if (out.size() != bits.size())
    throw std::runtime_error("attack run produced " + std::to_string(out.size()) + " samples for " +
                             std::to_string(bits.size()) + " symbols");
  return out;
}

}  // namespace detail

/// Runs the Trojan/spy pair over `bits`, split into setup.chunks independent
/// runs (distributed over `jobs` threads without affecting the result).
inline std::vector<Sample> collect_samples(const AttackSetup& setup, Protection p,
                                           const std::vector<std::uint64_t>& bits, std::uint64_t seed,
                                           unsigned jobs = 1) {
  const auto& policy = setup.scenario.kernel.policy;
  if (policy.domains.size() < 2 || !policy.has(setup.trojan) || !policy.has(setup.spy) || setup.trojan == setup.spy)
    throw std::invalid_argument("attack needs distinct Trojan and spy domains");
  const auto cfg = protection_config(setup, p);
  const auto chunks = std::max<std::size_t>(1, std::min(setup.chunks, bits.size()));
  std::vector<std::vector<Sample>> parts(chunks);
  auto work = [&](std::size_t first, std::size_t stride) {
    for (std::size_t c = first; c < chunks; c += stride) {
      const auto lo = bits.size() * c / chunks, hi = bits.size() * (c + 1) / chunks;
      std::vector<std::uint64_t> piece(bits.begin() + static_cast<std::ptrdiff_t>(lo),
                                       bits.begin() + static_cast<std::ptrdiff_t>(hi));
      parts[c] = detail::attack_chunk(setup, cfg, p, piece, hash_combine(seed, c));
    }
  };
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(chunks)));
  if (jobs == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned j = 0; j < jobs; ++j) pool.emplace_back(work, j, jobs);
  }
  std::vector<Sample> out;
  for (auto& part : parts) out.insert(out.end(), part.begin(), part.end());
  return out;
}

inline ChannelMatrix run_prime_probe(const AttackSetup& setup, Protection p, std::size_t samples_per_symbol,
                                     std::uint64_t seed, unsigned jobs = 1) {
  if (samples_per_symbol == 0) throw std::invalid_argument("samples_per_symbol must be positive");
  const auto bits = balanced_bits(samples_per_symbol, seed);
  return build_matrix(collect_samples(setup, p, bits, seed, jobs), setup.bin_width);
}

struct AttackResult {
  Protection protection = Protection::On;
  ChannelMatrix matrix;
  CapacityReport capacity;
};

inline AttackResult run_attack(const AttackSetup& setup, Protection p, std::size_t samples_per_symbol,
                               std::uint64_t seed, unsigned jobs = 1) {
  AttackResult r;
  r.protection = p;
  r.matrix = run_prime_probe(setup, p, samples_per_symbol, seed, jobs);
  r.capacity = capacity_report(r.matrix, setup.shuffles, seed);
  return r;
}

struct PrefetchReport {
  Replacement replacement = Replacement::Plru;
  CapacityReport prefetch;
  CapacityReport flush;
  std::optional<std::string> warning;
};

/// Kernel-global channel with the globals prefetched versus flushed.
inline PrefetchReport prefetch_experiment(const AttackSetup& setup, std::size_t samples_per_symbol,
                                          std::uint64_t seed, unsigned jobs = 1) {
  PrefetchReport r;
  r.replacement = setup.scenario.kernel.machine.cost.replacement;
  if (r.replacement != Replacement::Adversarial)
    r.warning = std::string("replacement policy is ") + to_string(r.replacement) +
                ", not adversarial; prefetching may happen to normalise it";
  r.prefetch = run_attack(setup, Protection::Prefetch, samples_per_symbol, seed, jobs).capacity;
  r.flush = run_attack(setup, Protection::TargetedFlush, samples_per_symbol, seed, jobs).capacity;
  return r;
}

inline std::string format_report(const PrefetchReport& r) {
  std::string out = std::string("replacement=") + to_string(r.replacement) + "\n";
  out += format_report(r.prefetch, "prefetch.");
  out += format_report(r.flush, "flush.");
  out += "warning=" + r.warning.value_or("none") + "\n";
  return out;
}

}  // namespace tp
