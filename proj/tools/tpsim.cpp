// tpsim: runs property suites, confidentiality checks and channel
// experiments against a JSON configuration.
//
// Exit status: 0 success, 1 violation or failed check, 2 usage or config error.

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "tp/tp.hpp"

namespace {

struct Globals {
  std::string config_path;
  std::uint64_t seed = 1;
  unsigned jobs = 1;
  bool no_timestamp = false;
  std::string replacement;
};

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

tp::Config load(const Globals& g) {
  auto cfg = tp::load_config(g.config_path);
  if (!g.replacement.empty()) {
    cfg.scenario.kernel.machine.cost.replacement = tp::parse_replacement(g.replacement, "--replacement");
    tp::validate_machine(cfg.scenario.kernel.machine);
    cfg.sync();
  }
  return cfg;
}

void header(const Globals& g, const std::string& command) {
  std::cout << "command=" << command << "\n";
  std::cout << "config=" << g.config_path << "\n";
  std::cout << "seed=" << g.seed << "\n";
  if (!g.no_timestamp) {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::cout << "timestamp=" << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ") << "\n";
  }
}

int cmd_check(const Globals& g, const std::string& suite, std::size_t cases, std::size_t runs, std::size_t fuzz,
              const std::string& records_path) {
  const auto cfg = load(g);
  header(g, "check");
  std::cout << "suite=" << suite << "\n";
  std::vector<tp::SuiteResult> results;
  if (suite == "properties" || suite == "all") {
    auto r = tp::property_suites(cfg.kernel(), cases, g.seed);
    results.insert(results.end(), r.begin(), r.end());
  }
  if (suite == "invariants" || suite == "all") {
    auto r = tp::invariant_suites(cfg.scenario, runs, fuzz, g.seed);
    results.insert(results.end(), r.begin(), r.end());
  }
  if (!records_path.empty()) {
    std::ofstream out(records_path);
    if (!out) throw UsageError("cannot write " + records_path);
    const auto& sc = cfg.scenario;
    const auto counts = tp::object_counts(sc.objects, sc.kernel.policy.domains.size());
    auto sched = tp::random_schedule(sc.kernel, counts, sc.slices, sc.max_inputs, g.seed);
    auto run = tp::run_system(sc.kernel, tp::boot(sc.kernel, sc.objects), std::move(sched), tp::NondetOracle(g.seed),
                              g.seed, true);
    for (const auto& rec : run.records) out << tp::record_line(rec) << "\n";
    std::cout << "records=" << run.records.size() << "\n";
  }
  std::size_t failed = 0;
  for (const auto& r : results) {
    std::cout << tp::format_suite(r) << "\n";
    if (!r.ok()) ++failed;
  }
  std::cout << "failed_suites=" << failed << "\n";
  return failed ? 1 : 0;
}

int cmd_confidentiality(const Globals& g, const std::string& variant, const std::string& observer_name,
                        std::size_t trials, const std::string& mutation_name) {
  const auto cfg = load(g);
  const auto mutation = tp::parse_mutation(mutation_name);
  if (!mutation) throw UsageError("unknown mutation '" + mutation_name + "'");
  auto observer = cfg.observer;
  if (!observer_name.empty()) {
    auto d = cfg.policy().find(observer_name);
    if (!d) throw UsageError("unknown observer '" + observer_name + "'");
    observer = *d;
  }
  if (trials == 0) trials = cfg.trials;
  const auto v = variant == "u" ? tp::Variant::U : tp::Variant::UMu;
  header(g, "confidentiality");
  const auto report = tp::check_confidentiality(cfg.scenario, observer, v, *mutation, trials, g.seed, g.jobs);
  std::cout << "observer_name=" << cfg.policy().domain(observer).name << "\n";
  std::cout << tp::format_report(report);
  return report.violations > 0 ? 1 : 0;
}

int cmd_attack(const Globals& g, const std::string& protection_name, std::size_t samples, const std::string& out_csv) {
  const auto cfg = load(g);
  const auto protection = tp::parse_protection(protection_name);
  if (!protection) throw UsageError("unknown protection '" + protection_name + "'");
  if (samples == 0) samples = cfg.samples_per_symbol;
  std::ofstream out;
  if (!out_csv.empty()) {
    out.open(out_csv);
    if (!out) throw UsageError("cannot write " + out_csv);
  }
  header(g, "attack");
  const auto result = tp::run_attack(cfg.attack, *protection, samples, g.seed, g.jobs);
  std::cout << "protection=" << tp::to_string(*protection) << "\n";
  std::cout << "replacement=" << tp::to_string(cfg.machine().cost.replacement) << "\n";
  std::cout << "samples_per_symbol=" << samples << "\n";
  std::cout << tp::format_report(result.capacity);
  if (out.is_open()) {
    out << tp::to_csv(result.matrix);
    std::cout << "csv=" << out_csv << "\n";
  }
  return 0;
}

int cmd_prefetch(const Globals& g, std::size_t samples) {
  const auto cfg = load(g);
  if (samples == 0) samples = cfg.samples_per_symbol;
  header(g, "prefetch-experiment");
  std::cout << "samples_per_symbol=" << samples << "\n";
  const auto report = tp::prefetch_experiment(cfg.attack, samples, g.seed, g.jobs);
  std::cout << tp::format_report(report);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Time-protection model simulator"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "Configuration file (JSON)")->required();
  app.add_option("--seed", g.seed, "Seed for all randomness");
  app.add_option("--jobs", g.jobs, "Worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--no-timestamp", g.no_timestamp, "Omit the timestamp line");
  app.add_option("--replacement", g.replacement, "Override the replacement policy")
      ->check(CLI::IsMember({"plru", "adversarial"}));

  std::string suite = "all", records;
  std::size_t cases = 1000, runs = 50, fuzz = 10000;
  auto* check = app.add_subcommand("check", "Run property and invariant suites");
  check->add_option("--suite", suite)->check(CLI::IsMember({"properties", "invariants", "all"}));
  check->add_option("--cases", cases, "Randomized cases per property");
  check->add_option("--runs", runs, "Benign full-system runs");
  check->add_option("--fuzz", fuzz, "Fuzzed syscall sequences");
  check->add_option("--records", records, "Write one benign run's step records as JSON lines");

  std::string variant = "u-mu", observer, mutation = "none";
  std::size_t trials = 0;
  auto* conf = app.add_subcommand("confidentiality", "Two-run noninterference check");
  conf->add_option("--variant", variant)->check(CLI::IsMember({"u", "u-mu"}));
  conf->add_option("--observer", observer, "Observer domain name");
  conf->add_option("--trials", trials, "Trials (default from config)");
  conf->add_option("--mutation", mutation, "none or a planted fault");

  std::string protection = "on", out_csv;
  std::size_t samples = 0;
  auto* attack = app.add_subcommand("attack", "Prime-and-probe channel measurement");
  attack->add_option("--protection", protection, "on, off, prefetch or targeted-flush");
  attack->add_option("--samples", samples, "Samples per symbol (default from config)");
  attack->add_option("--out", out_csv, "Channel matrix CSV");

  std::size_t pf_samples = 0;
  auto* prefetch = app.add_subcommand("prefetch-experiment", "Prefetching versus flushing kernel globals");
  prefetch->add_option("--samples", pf_samples, "Samples per symbol (default from config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*check) return cmd_check(g, suite, cases, runs, fuzz, records);
    if (*conf) return cmd_confidentiality(g, variant, observer, trials, mutation);
    if (*attack) return cmd_attack(g, protection, samples, out_csv);
    if (*prefetch) return cmd_prefetch(g, pf_samples);
  } catch (const tp::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
