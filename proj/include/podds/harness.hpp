#pragma once

// Replicated Monte-Carlo experiments. Replicate r simulates from substream
// (seed, r), so results depend only on (scenario, seed) and not on how many
// workers run or in which order they finish; aggregation walks the results in
// replicate order.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "podds/ide.hpp"
#include "podds/model.hpp"
#include "podds/nuisance.hpp"
#include "podds/rng.hpp"
#include "podds/scenario.hpp"
#include "podds/score.hpp"

namespace podds {

struct ReplicateRow {
  std::size_t rep = 0;
  std::uint64_t seed = 0;
  EstimatorKind kind = EstimatorKind::efficient;
  bool ok = false;
  double beta_hat = std::numeric_limits<double>::quiet_NaN();
  double se_hat = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
  std::string error;
};

struct SummaryRow {
  EstimatorKind kind = EstimatorKind::efficient;
  std::size_t replicates = 0;
  std::size_t successes = 0;
  std::size_t failures = 0;
  double mean_beta = std::numeric_limits<double>::quiet_NaN();
  double bias = std::numeric_limits<double>::quiet_NaN();
  double mc_sd = std::numeric_limits<double>::quiet_NaN();
  double mean_se = std::numeric_limits<double>::quiet_NaN();
  double coverage = std::numeric_limits<double>::quiet_NaN();
  /// MC variance over the naive MC variance; absent without a naive run.
  std::optional<double> variance_ratio;
  std::map<std::string, std::size_t> failure_counts;
};

struct SummaryTable {
  std::string scenario;
  double truth = 0.0;
  std::size_t n = 0;
  std::vector<SummaryRow> rows;

  const SummaryRow* find(EstimatorKind kind) const {
    for (const auto& r : rows) {
      if (r.kind == kind) return &r;
    }
    return nullptr;
  }
};

struct RunOptions {
  std::size_t jobs = 1;
  /// Overrides the scenario's grid size when nonzero.
  std::size_t grid = 0;
};

struct ScenarioResult {
  Scenario scenario;
  std::vector<ReplicateRow> rows;  // replicate-major, then scenario kind order
  SummaryTable summary;

  /// More than 20% failed replicates for some estimator kind.
  bool failed() const {
    for (const auto& r : summary.rows) {
      if (5 * r.failures > r.replicates) return true;
    }
    return false;
  }
};

namespace detail {

inline std::string failure_class(const std::exception& e) {
  if (dynamic_cast<const NonIdentified*>(&e)) return "non-identified";
  if (dynamic_cast<const NoRoot*>(&e)) return "no-root";
  if (dynamic_cast<const FlatScore*>(&e)) return "flat-score";
  if (dynamic_cast<const SolverFailure*>(&e)) return "solver-failure";
  if (dynamic_cast<const Singularity*>(&e)) return "singularity";
  if (dynamic_cast<const FitFailure*>(&e)) return "fit-failure";
  if (dynamic_cast<const PositivityViolation*>(&e)) return "positivity";
  return "other";
}

/// One replicate: data, nuisances, then every estimator kind. Failures are
/// captured per kind.
inline std::vector<ReplicateRow> run_replicate(const Scenario& s, std::size_t rep, const TimeGrid& grid) {
  const std::uint64_t seed = substream_seed(s.seed, rep);
  std::vector<ReplicateRow> rows;
  for (auto kind : s.estimators) {
    ReplicateRow row;
    row.rep = rep;
    row.seed = seed;
    row.kind = kind;
    rows.push_back(row);
  }
  auto fail_all = [&](const std::exception& e) {
    for (auto& r : rows) r.error = failure_class(e);
  };

  std::vector<Observation> data;
  NuisanceSet nuis;
  try {
    data = generate_dataset(s.n, s.truth, seed);
    if (s.nuisance == Provenance::oracle) {
      nuis = oracle_nuisances(s.truth);
    } else {
      nuis = fit_nuisances(data, s.truth.model.tau, s.misspecify).set;
    }
  } catch (const std::exception& e) {
    fail_all(e);
    return rows;
  }

  for (auto& row : rows) {
    try {
      SolveOptions options;
      const auto report = solve_beta(data, nuis, grid, row.kind, options);
      row.ok = std::isfinite(report.beta_hat) && std::isfinite(report.se_hat);
      row.beta_hat = report.beta_hat;
      row.se_hat = report.se_hat;
      row.iterations = report.iterations;
      if (!row.ok) row.error = "non-finite";
    } catch (const std::exception& e) {
      row.error = failure_class(e);
    }
  }
  return rows;
}

}  // namespace detail

inline SummaryTable summarize(const Scenario& s, const std::vector<ReplicateRow>& rows) {
  SummaryTable table{s.name, s.truth.model.beta, s.n, {}};
  constexpr double kZ975 = 1.959963984540054;
  for (auto kind : s.estimators) {
    SummaryRow out;
    out.kind = kind;
    std::vector<const ReplicateRow*> good;
    for (const auto& r : rows) {
      if (r.kind != kind) continue;
      ++out.replicates;
      if (r.ok) {
        good.push_back(&r);
      } else {
        ++out.failures;
        ++out.failure_counts[r.error];
      }
    }
    out.successes = good.size();
    if (!good.empty()) {
      const double m = static_cast<double>(good.size());
      double sum = 0.0, se_sum = 0.0;
      std::size_t covered = 0;
      for (const auto* r : good) {
        sum += r->beta_hat;
        se_sum += r->se_hat;
        covered += std::abs(r->beta_hat - s.truth.model.beta) <= kZ975 * r->se_hat ? 1 : 0;
      }
      out.mean_beta = sum / m;
      out.bias = out.mean_beta - s.truth.model.beta;
      out.mean_se = se_sum / m;
      out.coverage = static_cast<double>(covered) / m;
      if (good.size() > 1) {
        double ss = 0.0;
        for (const auto* r : good) ss += (r->beta_hat - out.mean_beta) * (r->beta_hat - out.mean_beta);
        out.mc_sd = std::sqrt(ss / (m - 1.0));
      }
    }
    table.rows.push_back(std::move(out));
  }
  if (const auto* naive = table.find(EstimatorKind::naive)) {
    const double base = naive->mc_sd * naive->mc_sd;
    for (auto& r : table.rows) r.variance_ratio = r.mc_sd * r.mc_sd / base;
  }
  return table;
}

inline ScenarioResult run_scenario(const Scenario& scenario, const RunOptions& options = {}) {
  scenario.validate();
  const TimeGrid grid(scenario.truth.model.tau, options.grid ? options.grid : scenario.grid);
  std::vector<std::vector<ReplicateRow>> slots(scenario.replicates);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t rep = next++; rep < scenario.replicates; rep = next++) {
      slots[rep] = detail::run_replicate(scenario, rep, grid);
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, scenario.replicates));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t i = 0; i < jobs; ++i) pool.emplace_back(worker);
  }

  ScenarioResult result{scenario, {}, {}};
  for (auto& slot : slots) {
    for (auto& row : slot) result.rows.push_back(std::move(row));
  }
  result.summary = summarize(scenario, result.rows);
  return result;
}

// =============================================================================
// Output
// =============================================================================

inline std::string format_real(double x) {
  if (std::isnan(x)) return "nan";
  return fmt::format("{:.17g}", x);
}

inline void write_replicates_csv(std::ostream& os, const std::vector<ReplicateRow>& rows) {
  os << "rep,seed,kind,beta_hat,se_hat,iters\n";
  for (const auto& r : rows) {
    os << r.rep << ',' << r.seed << ',' << to_string(r.kind) << ',' << format_real(r.beta_hat) << ','
       << format_real(r.se_hat) << ',' << r.iterations << '\n';
  }
}

inline nlohmann::json to_json(const SummaryTable& t) {
  auto real = [](double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr); };
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : t.rows) {
    rows.push_back({{"kind", to_string(r.kind)},
                    {"replicates", r.replicates},
                    {"successes", r.successes},
                    {"failures", r.failures},
                    {"failure_counts", r.failure_counts},
                    {"mean_beta", real(r.mean_beta)},
                    {"bias", real(r.bias)},
                    {"mc_sd", real(r.mc_sd)},
                    {"mean_se", real(r.mean_se)},
                    {"coverage", real(r.coverage)},
                    {"variance_ratio", r.variance_ratio ? real(*r.variance_ratio) : nlohmann::json(nullptr)}});
  }
  return {{"scenario", t.scenario}, {"truth", t.truth}, {"n", t.n}, {"estimators", rows}};
}

inline void write_summary_text(std::ostream& os, const SummaryTable& t) {
  os << fmt::format("scenario {}  n = {}  true beta = {:.6f}\n\n", t.scenario, t.n, t.truth);
  os << fmt::format("{:<10} {:>6} {:>6} {:>10} {:>10} {:>10} {:>10} {:>9} {:>9}\n", "kind", "ok", "fail", "mean",
                    "bias", "mc_sd", "mean_se", "coverage", "var_ratio");
  for (const auto& r : t.rows) {
    os << fmt::format("{:<10} {:>6} {:>6} {:>10.5f} {:>10.5f} {:>10.5f} {:>10.5f} {:>9.3f} {:>9}\n", to_string(r.kind),
                      r.successes, r.failures, r.mean_beta, r.bias, r.mc_sd, r.mean_se, r.coverage,
                      r.variance_ratio ? fmt::format("{:.3f}", *r.variance_ratio) : std::string("-"));
  }
  for (const auto& r : t.rows) {
    for (const auto& [what, count] : r.failure_counts) os << fmt::format("{}: {} x {}\n", to_string(r.kind), count, what);
  }
}

/// Dataset export: header `x,delta,a,z1..zk`.
inline void write_dataset_csv(std::ostream& os, std::span<const Observation> data) {
  const std::size_t k = data.empty() ? 0 : data.front().z.size();
  os << "x,delta,a";
  for (std::size_t i = 0; i < k; ++i) os << ",z" << i + 1;
  os << '\n';
  for (const auto& obs : data) {
    os << format_real(obs.x) << ',' << obs.delta << ',' << obs.a;
    for (double z : obs.z.values) os << ',' << format_real(z);
    os << '\n';
  }
}

inline std::vector<Observation> read_dataset_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ConfigError("dataset is empty");
  std::size_t columns = 1;
  for (char c : line) columns += c == ',' ? 1 : 0;
  if (columns < 3 || line.rfind("x,delta,a", 0) != 0) throw ConfigError("dataset header must start with x,delta,a");
  std::vector<Observation> data;
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> values;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw ConfigError(fmt::format("dataset row {}: '{}' is not a number", row, cell));
      }
    }
    if (values.size() != columns) throw ConfigError(fmt::format("dataset row {} has {} fields, expected {}", row, values.size(), columns));
    Observation obs;
    obs.x = values[0];
    obs.delta = static_cast<int>(values[1]);
    obs.a = static_cast<int>(values[2]);
    if (!(obs.x >= 0.0) || (obs.delta != 0 && obs.delta != 1) || (obs.a != 0 && obs.a != 1) ||
        values[1] != obs.delta || values[2] != obs.a) {
      throw ConfigError(fmt::format("dataset row {}: need x >= 0 and binary delta, a", row));
    }
    obs.z = CovariateProfile(std::vector<double>(values.begin() + 3, values.end()));
    data.push_back(std::move(obs));
  }
  return data;
}

/// Writes replicates.csv, summary.json and summary.txt into dir.
inline void write_outputs(const std::filesystem::path& dir, const ScenarioResult& result) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream csv(dir / "replicates.csv");
    write_replicates_csv(csv, result.rows);
  }
  {
    auto j = to_json(result.summary);
    j["config"] = to_json(result.scenario);
    j["failed"] = result.failed();
    std::ofstream out(dir / "summary.json");
    out << j.dump(2) << '\n';
  }
  {
    std::ofstream out(dir / "summary.txt");
    write_summary_text(out, result.summary);
  }
}

}  // namespace podds
