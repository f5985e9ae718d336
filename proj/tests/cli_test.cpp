#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "support.hpp"

namespace {

struct Result {
  int status = -1;
  std::string out;
};

Result tpsim(const std::string& args) {
  const std::string cmd = std::string(TP_TPSIM) + " " + args + " 2>&1";
  Result r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf{};
  while (auto n = fread(buf.data(), 1, buf.size(), p)) r.out.append(buf.data(), n);
  const int raw = pclose(p);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

std::string ref_arg() { return "--config " + tpt::config_path("reference.json"); }

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST(Cli, CheckPasses) {
  const auto r = tpsim(ref_arg() + " --no-timestamp check --cases 100 --runs 5 --fuzz 200");
  EXPECT_EQ(r.status, 0) << r.out;
  EXPECT_NE(r.out.find("failed_suites=0"), std::string::npos);
  EXPECT_NE(r.out.find("seed=1"), std::string::npos);
}

TEST(Cli, ConfidentialityExitCodes) {
  EXPECT_EQ(tpsim(ref_arg() + " confidentiality --trials 10").status, 0);
  const auto bad = tpsim(ref_arg() + " confidentiality --trials 10 --mutation no-pad");
  EXPECT_EQ(bad.status, 1) << bad.out;
  EXPECT_EQ(tpsim(ref_arg() + " confidentiality --observer nobody").status, 2);
  EXPECT_EQ(tpsim(ref_arg() + " confidentiality --mutation nonsense").status, 2);
}

TEST(Cli, UsageAndConfigErrors) {
  EXPECT_EQ(tpsim("check").status, 2);
  EXPECT_EQ(tpsim(ref_arg()).status, 2);
  EXPECT_EQ(tpsim("--help").status, 0);
  const auto missing = tpsim("--config /nonexistent.json check");
  EXPECT_EQ(missing.status, 2);
  EXPECT_NE(missing.out.find("config error"), std::string::npos);
  EXPECT_EQ(tpsim(ref_arg() + " attack --protection sideways").status, 2);
  EXPECT_EQ(tpsim(ref_arg() + " attack --samples 10 --out /nonexistent-dir/m.csv").status, 2);
}

TEST(Cli, AttackDeterministicAndCsv) {
  const auto dir = std::filesystem::temp_directory_path() / ("tpsim-cli-" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  const auto a = dir / "a.csv", b = dir / "b.csv";
  const auto ra = tpsim(ref_arg() + " --no-timestamp --seed 4 attack --protection off --samples 200 --out " + a.string());
  const auto rb = tpsim(ref_arg() + " --no-timestamp --seed 4 --jobs 3 attack --protection off --samples 200 --out " + b.string());
  ASSERT_EQ(ra.status, 0) << ra.out;
  // Reports differ only in the csv path line.
  auto strip = [](std::string s) { return s.substr(0, s.find("csv=")); };
  EXPECT_EQ(strip(ra.out), strip(rb.out));
  EXPECT_EQ(slurp(a), slurp(b));
  std::istringstream csv(slurp(a));
  std::size_t lines = 0;
  for (std::string l; std::getline(csv, l);) ++lines;
  EXPECT_EQ(lines, 3u);
  EXPECT_EQ(tpsim(ref_arg() + " attack --samples 20").out.find("timestamp=") != std::string::npos, true);
  std::filesystem::remove_all(dir);
}

TEST(Cli, PrefetchWarnsWithoutAdversarialPolicy) {
  const auto r = tpsim(ref_arg() + " --no-timestamp prefetch-experiment --samples 100");
  EXPECT_EQ(r.status, 0);
  EXPECT_NE(r.out.find("replacement=plru"), std::string::npos);
  EXPECT_EQ(r.out.find("warning=none"), std::string::npos);
  const auto adv = tpsim(ref_arg() + " --no-timestamp --replacement adversarial prefetch-experiment --samples 100");
  EXPECT_NE(adv.out.find("replacement=adversarial"), std::string::npos);
  EXPECT_NE(adv.out.find("warning=none"), std::string::npos);
}
