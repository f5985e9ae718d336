#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "support.hpp"

using namespace tp;

namespace {

using Counts = std::vector<std::vector<std::uint64_t>>;

// Reference value computed as H(X) + H(Y) - H(X,Y) in long double, a
// different route from the library's per-cell ratio sum.
double brute_mi(const Counts& m) {
  long double n = 0;
  std::vector<long double> row(m.size(), 0), col;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i].size() > col.size()) col.resize(m[i].size(), 0);
    for (std::size_t j = 0; j < m[i].size(); ++j) {
      row[i] += m[i][j];
      col[j] += m[i][j];
      n += m[i][j];
    }
  }
  auto h = [&](long double c) { return c == 0 ? 0.0L : -(c / n) * std::log2(c / n); };
  long double hx = 0, hy = 0, hxy = 0;
  for (auto r : row) hx += h(r);
  for (auto c : col) hy += h(c);
  for (const auto& r : m)
    for (auto c : r) hxy += h(static_cast<long double>(c));
  return static_cast<double>(hx + hy - hxy);
}

Counts random_counts(std::mt19937_64& gen) {
  std::uniform_int_distribution<int> rows(1, 4), cols(1, 8), zero(0, 3);
  std::uniform_int_distribution<std::uint64_t> val(1, 50);
  Counts m(rows(gen), std::vector<std::uint64_t>(cols(gen)));
  for (auto& r : m)
    for (auto& c : r) c = zero(gen) == 0 ? 0 : val(gen);
  m[0][0] += 1;
  return m;
}

std::vector<Sample> independent_samples(std::size_t per_symbol, std::mt19937_64& gen) {
  std::discrete_distribution<int> lat({5, 3, 1, 1});
  std::vector<Sample> out;
  for (std::uint64_t sym = 0; sym < 2; ++sym)
    for (std::size_t i = 0; i < per_symbol; ++i) out.push_back(Sample{sym, static_cast<Cycles>(100 + lat(gen))});
  return out;
}

}  // namespace

TEST(MutualInformation, KnownValues) {
  EXPECT_EQ(mutual_information(Counts{{7, 0}, {0, 7}}), 1.0);
  EXPECT_EQ(mutual_information(Counts{{5, 3, 2}, {5, 3, 2}}), 0.0);
  EXPECT_EQ(mutual_information(Counts{{4, 4}, {4, 4}}), 0.0);
  EXPECT_NEAR(mutual_information(Counts{{3, 1}, {1, 3}}), 0.18872187554086717, 1e-12);
  EXPECT_THROW(mutual_information(Counts{{0, 0}}), std::invalid_argument);
}

TEST(MutualInformation, MatchesEntropyForm) {
  std::mt19937_64 gen(12345);
  for (int i = 0; i < 200; ++i) {
    const auto m = random_counts(gen);
    EXPECT_NEAR(mutual_information(m), brute_mi(m), 1e-9);
  }
}

TEST(MutualInformation, BoundsPermutationAndMerging) {
  std::mt19937_64 gen(99);
  for (int i = 0; i < 200; ++i) {
    auto m = random_counts(gen);
    const auto mi = mutual_information(m);
    EXPECT_GE(mi, 0.0);
    EXPECT_LE(mi, std::log2(static_cast<double>(m.size())) + 1e-12);

    auto rows = m;
    std::shuffle(rows.begin(), rows.end(), gen);
    EXPECT_NEAR(mutual_information(rows), mi, 1e-12);
    auto cols = m;
    std::vector<std::size_t> perm(m[0].size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), gen);
    for (std::size_t r = 0; r < m.size(); ++r)
      for (std::size_t c = 0; c < perm.size(); ++c) cols[r][c] = m[r][perm[c]];
    EXPECT_NEAR(mutual_information(cols), mi, 1e-12);

    if (m[0].size() >= 2) {
      auto merged = m;
      for (auto& r : merged) {
        r[0] += r[1];
        r.erase(r.begin() + 1);
      }
      EXPECT_LE(mutual_information(merged), mi + 1e-12);
    }
  }
}

TEST(ChannelMatrixTest, BuildAndCsv) {
  const std::vector<Sample> s{{0, 10}, {0, 11}, {1, 11}, {1, 13}, {1, 13}};
  const auto m = build_matrix(s, 1);
  EXPECT_EQ(m.inputs, (std::vector<std::uint64_t>{0, 1}));
  EXPECT_EQ(m.bins, (std::vector<Cycles>{10, 11, 13}));
  EXPECT_EQ(m.counts, (Counts{{1, 1, 0}, {0, 1, 2}}));
  EXPECT_EQ(to_csv(m), "symbol,10,11,13\n0,1,1,0\n1,0,1,2\n");

  const auto wide = build_matrix(s, 2);
  EXPECT_EQ(wide.bins, (std::vector<Cycles>{10, 12}));
  EXPECT_EQ(wide.counts, (Counts{{2, 0}, {1, 2}}));
  EXPECT_THROW(build_matrix(s, 0), std::invalid_argument);
}

TEST(ApparentCapacity, SmallSampleBiasAndErrors) {
  std::mt19937_64 gen(5);
  const auto m = build_matrix(independent_samples(50, gen));
  const auto r = capacity_report(m, 200, 1);
  EXPECT_GT(r.m0_bits, 0.0);
  EXPECT_LE(r.m0_lo, r.m0_bits);
  EXPECT_LE(r.m0_bits, r.m0_hi);
  EXPECT_THROW(apparent_capacity(m, 99, 1), std::invalid_argument);
}

TEST(ApparentCapacity, ShrinksWithSamples) {
  std::mt19937_64 gen(6);
  const auto small = capacity_report(build_matrix(independent_samples(100, gen)), 100, 1);
  const auto large = capacity_report(build_matrix(independent_samples(10000, gen)), 100, 1);
  EXPECT_LT(large.m0_bits, small.m0_bits / 10);
}

TEST(ApparentCapacity, ConsistentOnIndependentJoint) {
  std::mt19937_64 gen(2024);
  int within = 0;
  for (int rep = 0; rep < 50; ++rep) {
    const auto r = capacity_report(build_matrix(independent_samples(500, gen)), 200, rep);
    if (r.within_m0()) ++within;
  }
  EXPECT_GE(within, 45);
}

TEST(Percentile, LinearInterpolation) {
  EXPECT_DOUBLE_EQ(percentile({1, 2, 3, 4, 5}, 0.5), 3.0);
  EXPECT_DOUBLE_EQ(percentile({1, 2}, 0.25), 1.25);
  EXPECT_DOUBLE_EQ(percentile({4, 1, 3}, 1.0), 4.0);
}

TEST(Attack, ZeroSamplesRejected) {
  EXPECT_THROW(run_prime_probe(tpt::reference().attack, Protection::On, 0, 1), std::invalid_argument);
}

TEST(Attack, SmallRunSeparatesAndIsDeterministic) {
  const auto& setup = tpt::reference().attack;
  const auto off = run_attack(setup, Protection::Off, 400, 3, 2);
  EXPECT_GT(off.capacity.m_bits, off.capacity.m0_hi);
  EXPECT_EQ(off.matrix.row_sum(0), 400u);
  EXPECT_EQ(off.matrix.row_sum(1), 400u);
  const auto again = run_attack(setup, Protection::Off, 400, 3, 1);
  EXPECT_EQ(again.matrix, off.matrix);

  std::istringstream csv(to_csv(off.matrix));
  std::size_t lines = 0;
  for (std::string l; std::getline(csv, l);) ++lines;
  EXPECT_EQ(lines, off.matrix.inputs.size() + 1);
}

TEST(Attack, PrefetchReportNamesPolicy) {
  const auto& plru = tpt::reference().attack;
  const auto r = prefetch_experiment(plru, 200, 1, 2);
  EXPECT_EQ(r.replacement, Replacement::Plru);
  ASSERT_TRUE(r.warning);
  const auto text = format_report(r);
  EXPECT_NE(text.find("replacement=plru"), std::string::npos);

  const auto adv = load_config(tpt::config_path("adversarial.json"));
  const auto a = prefetch_experiment(adv.attack, 1000, 1, 2);
  EXPECT_FALSE(a.warning);
  EXPECT_GT(a.prefetch.m_bits, a.flush.m_bits);
}
