// podds: simulate, estimate, verify and solve-h0 for the proportional odds
// model.
//
// Exit codes: 0 success, 1 verification failure or unexpected error,
// 2 scenario-level failure (more than 20% failed replicates), 3 invalid
// configuration.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "podds/harness.hpp"
#include "podds/ide.hpp"
#include "podds/nuisance.hpp"
#include "podds/scenario.hpp"
#include "podds/score.hpp"
#include "podds/verify.hpp"

namespace fs = std::filesystem;
using namespace podds;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kScenarioFailure = 2;
constexpr int kInvalidConfig = 3;

struct Common {
  std::string scenario = "s1";
  std::string out;
  std::optional<std::uint64_t> seed;
  std::size_t grid = 0;
  std::size_t jobs = 1;
  std::optional<std::size_t> n;
  std::optional<std::size_t> replicates;
};

/// A path to a scenario file, or the name of a built-in scenario.
Scenario resolve_scenario(const Common& c) {
  Scenario s = fs::exists(c.scenario) ? load_scenario(c.scenario) : builtin_scenario(c.scenario);
  if (c.seed) s.seed = *c.seed;
  if (c.grid) s.grid = c.grid;
  if (c.n) s.n = *c.n;
  if (c.replicates) s.replicates = *c.replicates;
  s.validate();
  return s;
}

fs::path output_dir(const Common& c) {
  const fs::path dir = c.out.empty() ? fs::path(".") : fs::path(c.out);
  fs::create_directories(dir);
  return dir;
}

int simulate(const Common& c) {
  const auto s = resolve_scenario(c);
  const auto data = generate_dataset(s.n, s.truth, s.seed);
  const auto path = output_dir(c) / "dataset.csv";
  std::ofstream out(path);
  write_dataset_csv(out, data);
  std::cout << fmt::format("wrote {} subjects to {}\n", data.size(), path.string());
  return kOk;
}

int estimate(const Common& c, const std::string& data_path) {
  if (data_path.empty()) {
    const auto s = resolve_scenario(c);
    const auto result = run_scenario(s, RunOptions{c.jobs, 0});
    const auto dir = output_dir(c);
    write_outputs(dir, result);
    write_summary_text(std::cout, result.summary);
    if (result.failed()) {
      std::cerr << "more than 20% of replicates failed\n";
      return kScenarioFailure;
    }
    return kOk;
  }

  // One dataset: fitted working models, both estimators.
  std::ifstream in(data_path);
  if (!in) throw ConfigError("cannot open dataset '" + data_path + "'");
  const auto data = read_dataset_csv(in);
  if (data.empty()) throw ConfigError("dataset has no rows");
  double tau = 0.0;
  for (const auto& obs : data) tau = std::max(tau, obs.x);
  const auto fit = fit_nuisances(data, kInfinity);
  const TimeGrid grid(tau, c.grid ? c.grid : 2000);
  nlohmann::json j;
  j["nuisances"] = to_json(fit);
  j["horizon"] = tau;
  for (auto kind : {EstimatorKind::naive, EstimatorKind::efficient}) {
    try {
      j["estimates"].push_back(to_json(solve_beta(data, fit.set, grid, kind)));
    } catch (const std::exception& e) {
      j["estimates"].push_back({{"kind", to_string(kind)}, {"error", e.what()}});
    }
  }
  if (!c.out.empty()) {
    std::ofstream out(output_dir(c) / "estimate.json");
    out << j.dump(2) << '\n';
  }
  std::cout << j.dump(2) << '\n';
  return kOk;
}

int verify_suites(const Common& c, const std::string& suite) {
  std::vector<std::string> names;
  if (suite == "all") {
    names = verify::suite_names();
  } else {
    names = {suite};
  }
  const std::uint64_t seed = c.seed.value_or(1);
  nlohmann::json report = nlohmann::json::array();
  bool pass = true;
  for (const auto& name : names) {
    std::vector<VerificationEntry> elements;
    verify::SuiteReport r;
    if (name == "orthogonality") {
      auto battery = verify::orthogonality_battery(seed);
      r = std::move(battery.report);
      elements = std::move(battery.entries);
    } else {
      r = verify::run_suite(name, seed);
    }
    for (const auto& check : r.checks) {
      std::cout << fmt::format("[{}] {:<8} {}: {:.4g} (threshold {:.4g}){}\n", name,
                               check.pass ? "pass" : (check.gating ? "FAIL" : "note"), check.name, check.value,
                               check.threshold, check.detail.empty() ? "" : "  " + check.detail);
    }
    std::cout << fmt::format("[{}] {} in {:.2f}s\n", name, r.pass() ? "PASS" : "FAIL", r.seconds);
    pass = pass && r.pass();
    nlohmann::json j = verify::to_json(r);
    if (!elements.empty()) {
      j["elements"] = nlohmann::json::array();
      for (const auto& e : elements) j["elements"].push_back(to_json(e));
    }
    report.push_back(j);
  }
  if (!c.out.empty()) {
    std::ofstream out(output_dir(c) / "verify.json");
    out << report.dump(2) << '\n';
  }
  return pass ? kOk : kFailure;
}

int solve_h0_profiles(const Common& c, std::optional<double> beta) {
  const auto s = resolve_scenario(c);
  const auto nuis = oracle_nuisances(s.truth);
  const TimeGrid grid(s.truth.model.tau, s.grid);
  const double b = beta.value_or(s.truth.model.beta);
  std::vector<H0Solution> solutions;
  for (const auto& z : s.truth.treatment.law.support) {
    solutions.push_back(solve_profile(grid, z, b, nuis, efficient_target()));
    const auto& sol = solutions.back();
    std::cout << fmt::format("z={} residual={:.3g} projection={:.3g} shift={:.6f} h0(tau)={:.6f}\n", z.str(),
                             sol.residual, sol.projection_residual, sol.boundary_shift, sol.h0.back());
  }
  std::ofstream out(output_dir(c) / "h0_profiles.csv");
  write_h0_csv(out, solutions);
  return kOk;
}

void add_common(CLI::App* app, Common& c, bool scenario_options) {
  app->add_option("--out", c.out, "Output directory");
  app->add_option("--seed", c.seed, "Master seed (overrides the scenario)");
  if (!scenario_options) return;
  app->add_option("--scenario", c.scenario, "Scenario JSON file or built-in name (s1, confounded, spline)")
      ->capture_default_str();
  app->add_option("--grid", c.grid, "Time-grid intervals M (overrides the scenario)");
  app->add_option("--jobs", c.jobs, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  app->add_option("--n", c.n, "Subjects per replicate (overrides the scenario)");
  app->add_option("--replicates", c.replicates, "Replicate count (overrides the scenario)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Efficient estimation of the survival odds ratio in the proportional odds model"};
  app.require_subcommand(1);

  Common common;
  auto* sim = app.add_subcommand("simulate", "Write one simulated dataset (dataset.csv)");
  add_common(sim, common, true);

  std::string data_path;
  auto* est = app.add_subcommand("estimate", "Run a replicated experiment, or estimate beta on --data");
  add_common(est, common, true);
  est->add_option("--data", data_path, "Dataset CSV (x,delta,a,z1..zk); nuisances are fitted");

  std::string suite = "all";
  auto* ver = app.add_subcommand("verify", "Run verification suites");
  add_common(ver, common, false);
  ver->add_option("--suite", suite, "algebra, sampling, ide, score, orthogonality, towerlaw or all")
      ->capture_default_str();

  std::optional<double> beta;
  auto* h0 = app.add_subcommand("solve-h0", "Solve h0 per covariate profile (h0_profiles.csv)");
  add_common(h0, common, true);
  h0->add_option("--beta", beta, "Beta at which to solve (default: the scenario's)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalidConfig;
  }

  try {
    if (*sim) return simulate(common);
    if (*est) return estimate(common, data_path);
    if (*ver) return verify_suites(common, suite);
    if (*h0) return solve_h0_profiles(common, beta);
  } catch (const ConfigError& e) {
    std::cerr << "invalid configuration: " << e.what() << '\n';
    return kInvalidConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}
