#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "catch_amalgamated.hpp"
#include "podds/harness.hpp"
#include "podds/scenario.hpp"

using namespace podds;
using Catch::Approx;

namespace {

Scenario small_s1(std::size_t replicates = 6) {
  Scenario s = scenario_s1();
  s.n = 300;
  s.replicates = replicates;
  s.grid = 400;
  return s;
}

std::string csv(const std::vector<ReplicateRow>& rows) {
  std::ostringstream os;
  write_replicates_csv(os, rows);
  return os.str();
}

}  // namespace

TEST_CASE("dataset CSV round trips exactly") {
  const auto data = generate_dataset(200, scenario_confounded().truth, 3);
  std::stringstream ss;
  write_dataset_csv(ss, data);
  const auto back = read_dataset_csv(ss);
  REQUIRE(back.size() == data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK(back[i].x == data[i].x);
    CHECK(back[i].delta == data[i].delta);
    CHECK(back[i].a == data[i].a);
    CHECK(back[i].z == data[i].z);
  }
}

TEST_CASE("malformed dataset CSV is a configuration error") {
  auto read = [](const std::string& text) {
    std::istringstream is(text);
    return read_dataset_csv(is);
  };
  CHECK_THROWS_AS(read(""), ConfigError);
  CHECK_THROWS_AS(read("t,d,a\n1,1,0\n"), ConfigError);
  CHECK_THROWS_AS(read("x,delta,a,z1\n1,1,0\n"), ConfigError);
  CHECK_THROWS_AS(read("x,delta,a,z1\n1,2,0,0\n"), ConfigError);
  CHECK_THROWS_AS(read("x,delta,a,z1\n-1,1,0,0\n"), ConfigError);
  CHECK_THROWS_AS(read("x,delta,a,z1\n1,1,0.5,0\n"), ConfigError);
  CHECK_THROWS_AS(read("x,delta,a,z1\n1,1,0,abc\n"), ConfigError);
  CHECK(read("x,delta,a,z1\n1.5,1,0,2\n\n").size() == 1);
}

TEST_CASE("scenario JSON round trips") {
  for (const auto& s : shipped_scenarios()) {
    const auto back = scenario_from_json(to_json(s));
    CHECK(to_json(back) == to_json(s));
    CHECK(back.truth.model.beta == s.truth.model.beta);
    CHECK(back.truth.model.odds.value(2.0, s.truth.treatment.law.support.back()) ==
          s.truth.model.odds.value(2.0, s.truth.treatment.law.support.back()));
  }
}

TEST_CASE("invalid scenarios are configuration errors") {
  auto j = to_json(scenario_s1());
  j["n"] = 1;
  CHECK_THROWS_AS(scenario_from_json(j), ConfigError);
  j = to_json(scenario_s1());
  j["odds"]["family"] = "weibull";
  CHECK_THROWS_AS(scenario_from_json(j), ConfigError);
  j = to_json(scenario_s1());
  j["covariates"]["prob"] = {0.5, 0.6};
  CHECK_THROWS_AS(scenario_from_json(j), ConfigError);
  j = to_json(scenario_s1());
  j.erase("beta");
  CHECK_THROWS_AS(scenario_from_json(j), ConfigError);
  CHECK_THROWS_AS(builtin_scenario("s9"), ConfigError);
  CHECK_THROWS_AS(load_scenario("/nonexistent/scenario.json"), ConfigError);
}

TEST_CASE("S1 censoring rate gives a quarter randomly censored") {
  CHECK(random_censoring_fraction(scenario_s1().truth) == Approx(0.25).margin(1e-3));
}

TEST_CASE("replicates are reproducible and independent of thread count") {
  const auto s = small_s1();
  const auto serial = run_scenario(s, RunOptions{1, 0});
  CHECK(csv(serial.rows) == csv(run_scenario(s, RunOptions{1, 0}).rows));
  CHECK(csv(serial.rows) == csv(run_scenario(s, RunOptions{3, 0}).rows));
  CHECK(serial.rows.size() == 2 * s.replicates);
  for (const auto& r : serial.rows) CHECK(r.seed == substream_seed(s.seed, r.rep));
}

TEST_CASE("replicate r does not depend on the replicate count") {
  const auto few = run_scenario(small_s1(2));
  const auto more = run_scenario(small_s1(5));
  for (std::size_t i = 0; i < few.rows.size(); ++i) {
    CHECK(few.rows[i].beta_hat == more.rows[i].beta_hat);
    CHECK(few.rows[i].se_hat == more.rows[i].se_hat);
  }
}

TEST_CASE("failed replicates are isolated and classified") {
  // With n = 2 many replicates put both subjects in one arm.
  Scenario s = small_s1(40);
  s.n = 2;
  const auto result = run_scenario(s);
  std::size_t non_identified = 0;
  for (const auto& r : result.rows) {
    if (!r.ok) {
      CHECK(std::isnan(r.beta_hat));
      non_identified += r.error == "non-identified" ? 1 : 0;
    }
  }
  CHECK(non_identified > 0);
  const auto* naive = result.summary.find(EstimatorKind::naive);
  REQUIRE(naive != nullptr);
  CHECK(naive->failures + naive->successes == 40);
  CHECK(naive->failure_counts.at("non-identified") > 0);
  CHECK(result.failed());
  CHECK(csv(result.rows).find("nan") != std::string::npos);
}

TEST_CASE("summary statistics") {
  Scenario s = scenario_s1();
  s.truth.model.beta = 1.0;
  std::vector<ReplicateRow> rows;
  const double naive_beta[] = {0.8, 1.2, 1.0, 1.0};
  const double eff_beta[] = {0.9, 1.1, 1.0, 1.6};
  for (std::size_t i = 0; i < 4; ++i) {
    rows.push_back({i, 0, EstimatorKind::naive, true, naive_beta[i], 0.15, 5, {}});
    rows.push_back({i, 0, EstimatorKind::efficient, true, eff_beta[i], 0.15, 5, {}});
  }
  rows.push_back({4, 0, EstimatorKind::efficient, false, std::nan(""), std::nan(""), 0, "no-root"});
  const auto t = summarize(s, rows);
  const auto* naive = t.find(EstimatorKind::naive);
  const auto* eff = t.find(EstimatorKind::efficient);
  CHECK(naive->mean_beta == Approx(1.0));
  CHECK(naive->mc_sd == Approx(std::sqrt(0.08 / 3)));
  CHECK(naive->coverage == Approx(1.0));
  CHECK(eff->replicates == 5);
  CHECK(eff->failures == 1);
  CHECK(eff->bias == Approx(0.15));
  CHECK(eff->coverage == Approx(0.75));
  CHECK(*eff->variance_ratio == Approx(eff->mc_sd * eff->mc_sd / (naive->mc_sd * naive->mc_sd)));
  CHECK(*naive->variance_ratio == Approx(1.0));

  ScenarioResult result{s, rows, t};
  CHECK(!result.failed());  // 1 of 5 is exactly 20%
  result.rows.push_back({5, 0, EstimatorKind::efficient, false, std::nan(""), std::nan(""), 0, "no-root"});
  result.summary = summarize(s, result.rows);
  CHECK(result.failed());

  const auto j = to_json(t);
  CHECK(j["estimators"][1]["failure_counts"]["no-root"] == 1);
}

TEST_CASE("outputs are written to the directory") {
  const auto dir = std::filesystem::temp_directory_path() / "podds_test_outputs";
  std::filesystem::remove_all(dir);
  const auto result = run_scenario(small_s1(2));
  write_outputs(dir, result);
  for (const char* name : {"replicates.csv", "summary.json", "summary.txt"}) {
    CHECK(std::filesystem::exists(dir / name));
  }
  std::ifstream in(dir / "summary.json");
  const auto j = nlohmann::json::parse(in);
  CHECK(j["config"]["name"] == "s1");
  CHECK(j["failed"] == false);
  std::filesystem::remove_all(dir);
}
