#pragma once

// Scenario files: the data-generating truth plus the Monte-Carlo design.
//
//   {
//     "name": "s1",
//     "beta": 0.693147,
//     "odds": {"family": "log-logistic", "alpha": 1, "kappa": 1, "gamma": [0.5]},
//     "censoring": {"family": "exponential", "rates": [0.19, 0.19]},
//     "propensity": {"family": "constant", "value": 0.5},
//     "covariates": {"support": [[0], [1]], "prob": [0.5, 0.5]},
//     "tau": 4, "n": 2000, "replicates": 500, "grid": 2000,
//     "estimators": ["naive", "efficient"],
//     "nuisance": "oracle",
//     "seed": 1
//   }
//
// "odds" may instead be {"family": "spline", "knots": [...],
// "profiles": [{"z": [...], "values": [...]}]}; "censoring" may be
// {"family": "none"}; "propensity" may be {"family": "logistic", "coef": [...]}
// with the intercept first. "nuisance" is oracle, fitted or misspecified, the
// last with "misspecify": {"propensity": bool, "odds": bool}.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "podds/errors.hpp"
#include "podds/model.hpp"
#include "podds/nuisance.hpp"
#include "podds/score.hpp"

namespace podds {

struct Scenario {
  std::string name = "scenario";
  Truth truth;
  std::size_t n = 2000;
  std::size_t replicates = 100;
  std::size_t grid = 2000;
  std::vector<EstimatorKind> estimators{EstimatorKind::naive, EstimatorKind::efficient};
  Provenance nuisance = Provenance::oracle;
  Misspecification misspecify;
  std::uint64_t seed = 1;

  void validate() const {
    if (!std::isfinite(truth.model.beta)) throw ConfigError("beta must be finite");
    if (!(truth.model.tau > 0.0) || !std::isfinite(truth.model.tau)) throw ConfigError("tau must be positive and finite");
    if (n < 2) throw ConfigError("n must be at least 2");
    if (replicates < 1) throw ConfigError("replicates must be at least 1");
    if (grid < 2) throw ConfigError("grid must have at least 2 intervals");
    if (estimators.empty()) throw ConfigError("at least one estimator kind is required");
    try {
      truth.treatment.law.validate();
      for (const auto& z : truth.treatment.law.support) {
        const double p = truth.treatment.propensity(z);
        if (!(p > 0.0 && p < 1.0)) throw ConfigError("propensity must lie in (0, 1) on the support");
        if (truth.model.odds.value(0.0, z) != 0.0) throw ConfigError("odds must satisfy R(0, z) = 0");
      }
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  }
};

namespace detail {

inline CovariateProfile profile_from_json(const nlohmann::json& j) {
  return CovariateProfile{j.get<std::vector<double>>()};
}

inline OddsFn odds_from_json(const nlohmann::json& j) {
  const auto family = j.at("family").get<std::string>();
  if (family == "log-logistic") {
    LogLogisticOdds odds{j.at("alpha").get<double>(), j.at("kappa").get<double>(),
                         j.value("gamma", std::vector<double>{})};
    odds.validate();
    return OddsFn{odds};
  }
  if (family == "spline") {
    std::vector<SplineOdds::Profile> profiles;
    for (const auto& p : j.at("profiles")) {
      profiles.push_back({profile_from_json(p.at("z")), p.at("values").get<std::vector<double>>()});
    }
    return OddsFn{SplineOdds(j.at("knots").get<std::vector<double>>(), std::move(profiles))};
  }
  throw ConfigError("unknown odds family '" + family + "'");
}

inline nlohmann::json odds_to_json(const OddsFn& odds) {
  if (const auto* ll = odds.log_logistic()) {
    return {{"family", "log-logistic"}, {"alpha", ll->alpha}, {"kappa", ll->kappa}, {"gamma", ll->gamma}};
  }
  const auto* sp = odds.spline();
  nlohmann::json profiles = nlohmann::json::array();
  for (const auto& p : sp->profiles()) profiles.push_back({{"z", p.z.values}, {"values", p.values}});
  return {{"family", "spline"}, {"knots", sp->knots()}, {"profiles", profiles}};
}

inline CensoringModel censoring_from_json(const nlohmann::json& j) {
  const auto family = j.at("family").get<std::string>();
  if (family == "none") return CensoringModel::none();
  if (family == "exponential") {
    const auto rates = j.at("rates").get<std::vector<double>>();
    if (rates.size() != 2) throw ConfigError("exponential censoring needs one rate per arm");
    return CensoringModel::exponential(rates[0], rates[1]);
  }
  throw ConfigError("unknown censoring family '" + family + "'");
}

inline Propensity propensity_from_json(const nlohmann::json& j) {
  const auto family = j.at("family").get<std::string>();
  if (family == "constant") return Propensity::constant(j.at("value").get<double>());
  if (family == "logistic") return Propensity::logistic(j.at("coef").get<std::vector<double>>());
  throw ConfigError("unknown propensity family '" + family + "'");
}

inline Provenance provenance_from_string(const std::string& s) {
  if (s == "oracle") return Provenance::oracle;
  if (s == "fitted") return Provenance::fitted;
  if (s == "misspecified") return Provenance::misspecified;
  throw ConfigError("unknown nuisance mode '" + s + "'");
}

}  // namespace detail

inline Scenario scenario_from_json(const nlohmann::json& j) {
  Scenario s;
  try {
    s.name = j.value("name", std::string("scenario"));
    s.truth.model.beta = j.at("beta").get<double>();
    s.truth.model.odds = detail::odds_from_json(j.at("odds"));
    s.truth.model.tau = j.at("tau").get<double>();
    s.truth.censoring = j.contains("censoring") ? detail::censoring_from_json(j.at("censoring")) : CensoringModel::none();
    s.truth.treatment.propensity = detail::propensity_from_json(j.at("propensity"));
    const auto& cov = j.at("covariates");
    for (const auto& z : cov.at("support")) s.truth.treatment.law.support.push_back(detail::profile_from_json(z));
    s.truth.treatment.law.prob = cov.at("prob").get<std::vector<double>>();
    s.n = j.value("n", s.n);
    s.replicates = j.value("replicates", s.replicates);
    s.grid = j.value("grid", s.grid);
    if (j.contains("estimators")) {
      s.estimators.clear();
      for (const auto& k : j.at("estimators")) s.estimators.push_back(estimator_kind_from_string(k.get<std::string>()));
    }
    s.nuisance = detail::provenance_from_string(j.value("nuisance", std::string("oracle")));
    if (j.contains("misspecify")) {
      s.misspecify.propensity = j.at("misspecify").value("propensity", false);
      s.misspecify.odds = j.at("misspecify").value("odds", false);
    }
    if (s.nuisance == Provenance::misspecified && !s.misspecify.any()) {
      throw ConfigError("nuisance mode 'misspecified' needs at least one misspecify toggle");
    }
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed scenario: ") + e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("invalid scenario: ") + e.what());
  }
  s.validate();
  return s;
}

inline nlohmann::json to_json(const Scenario& s) {
  const auto& t = s.truth;
  nlohmann::json j;
  j["name"] = s.name;
  j["beta"] = t.model.beta;
  j["odds"] = detail::odds_to_json(t.model.odds);
  if (t.censoring.is_none()) {
    j["censoring"] = {{"family", "none"}};
  } else {
    j["censoring"] = {{"family", "exponential"}, {"rates", {t.censoring.rate(0), t.censoring.rate(1)}}};
  }
  if (t.treatment.propensity.is_constant()) {
    j["propensity"] = {{"family", "constant"}, {"value", t.treatment.propensity.constant_value()}};
  } else {
    j["propensity"] = {{"family", "logistic"}, {"coef", t.treatment.propensity.coefficients()}};
  }
  nlohmann::json support = nlohmann::json::array();
  for (const auto& z : t.treatment.law.support) support.push_back(z.values);
  j["covariates"] = {{"support", support}, {"prob", t.treatment.law.prob}};
  j["tau"] = t.model.tau;
  j["n"] = s.n;
  j["replicates"] = s.replicates;
  j["grid"] = s.grid;
  nlohmann::json kinds = nlohmann::json::array();
  for (auto k : s.estimators) kinds.push_back(to_string(k));
  j["estimators"] = kinds;
  j["nuisance"] = to_string(s.nuisance);
  j["misspecify"] = {{"propensity", s.misspecify.propensity}, {"odds", s.misspecify.odds}};
  j["seed"] = s.seed;
  return j;
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("scenario file '" + path + "' is not valid JSON: " + e.what());
  }
  return scenario_from_json(j);
}

// =============================================================================
// Built-in scenarios
// =============================================================================

/// Exponential censoring rate, equal in both arms, that S1 calibrates to a 25%
/// random-censoring fraction.
inline constexpr double kS1CensoringRate = 0.19267323927257973;

/// beta = log 2, R(t, z) = t e^{0.5 z}, binary Z, pi = 0.5, tau = 4, 25%
/// exponential censoring, oracle nuisances.
inline Scenario scenario_s1() {
  Scenario s;
  s.name = "s1";
  s.truth.model = OddsModel{std::numbers::ln2, OddsFn{LogLogisticOdds{1.0, 1.0, {0.5}}}, 4.0};
  s.truth.censoring = CensoringModel::exponential(kS1CensoringRate, kS1CensoringRate);
  s.truth.treatment = TreatmentModel{Propensity::constant(0.5), CovariateLaw{{CovariateProfile{0.0}, CovariateProfile{1.0}}, {0.5, 0.5}}};
  s.n = 2000;
  s.replicates = 500;
  s.grid = 2000;
  s.seed = 20240601;
  return s;
}

/// S1 with treatment depending on Z and arm-specific censoring.
inline Scenario scenario_confounded() {
  Scenario s = scenario_s1();
  s.name = "confounded";
  s.truth.censoring = CensoringModel::exponential(0.15, 0.3);
  s.truth.treatment.propensity = Propensity::logistic({-0.5, 1.5});
  s.seed = 20240602;
  return s;
}

/// Tabulated odds: R(t, z) = (0.8 t + 0.05 t^2) e^{0.5 z} at the knots, PCHIP in between.
inline Scenario scenario_spline() {
  Scenario s = scenario_s1();
  s.name = "spline";
  const std::vector<double> knots{0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0};
  std::vector<SplineOdds::Profile> profiles;
  for (double z : {0.0, 1.0}) {
    std::vector<double> values;
    for (double t : knots) values.push_back((0.8 * t + 0.05 * t * t) * std::exp(0.5 * z));
    profiles.push_back({CovariateProfile{z}, values});
  }
  s.truth.model.odds = OddsFn{SplineOdds(knots, std::move(profiles))};
  s.seed = 20240603;
  return s;
}

inline Scenario builtin_scenario(const std::string& name) {
  if (name == "s1") return scenario_s1();
  if (name == "confounded") return scenario_confounded();
  if (name == "spline") return scenario_spline();
  throw ConfigError("unknown built-in scenario '" + name + "'");
}

inline std::vector<Scenario> shipped_scenarios() { return {scenario_s1(), scenario_confounded(), scenario_spline()}; }

}  // namespace podds
