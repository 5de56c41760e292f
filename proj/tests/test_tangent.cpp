#include <cmath>
#include <numbers>
#include <vector>

#include "catch_amalgamated.hpp"
#include "podds/scenario.hpp"
#include "podds/score.hpp"
#include "podds/tangent.hpp"

using namespace podds;
using Catch::Approx;

namespace {

const OddsDirection& direction(const std::vector<OddsDirection>& bank, const std::string& id) {
  for (const auto& d : bank) {
    if (d.id == id) return d;
  }
  throw std::logic_error("no direction " + id);
}

}  // namespace

TEST_CASE("lambda1 compensator has the closed form h(X) / (e + R(X))") {
  const auto sc = scenario_s1();
  const auto& model = sc.truth.model;
  const auto bank = odds_direction_bank(model.tau);
  for (const auto& dir : bank) {
    for (double x : {0.3, 1.7, 4.0}) {
      for (int a : {0, 1}) {
        const Observation obs{x, 0, a, CovariateProfile{1.0}};
        const double e = std::exp(model.beta * a);
        const double closed = -dir.h(x, obs.z) / (e + model.odds.value(x, obs.z));
        CHECK(lambda1_element(obs, dir, model) == Approx(closed).margin(1e-10));
      }
    }
  }
}

TEST_CASE("lambda1 element is the derivative along R + eps h") {
  const auto sc = scenario_s1();
  const auto& model = sc.truth.model;
  const auto bank = odds_direction_bank(model.tau);
  Stream stream(3);
  for (int i = 0; i < 50; ++i) {
    const Observation obs{0.05 + 3.9 * stream.uniform(), stream.uniform() < 0.5 ? 1 : 0,
                          stream.uniform() < 0.5 ? 1 : 0, CovariateProfile{stream.uniform() < 0.5 ? 0.0 : 1.0}};
    const double e = std::exp(model.beta * obs.a);
    const double R = model.odds.value(obs.x, obs.z);
    const double r = model.odds.density(obs.x, obs.z);
    for (const auto& dir : bank) {
      const double h = dir.h(obs.x, obs.z);
      const double dh = dir.dh(obs.x, obs.z);
      auto loglik = [&](double eps) {
        const double u = e + R + eps * h;
        return std::log(e) - std::log(u) + obs.delta * (std::log(r + eps * dh) - std::log(u));
      };
      const double step = 1e-6;
      const double fd = (loglik(step) - loglik(-step)) / (2 * step);
      const double submodel = obs.delta * dh / r - (1 + obs.delta) * h / (e + R);
      CHECK(submodel == Approx(fd).margin(1e-6));
      CHECK(lambda1_element(obs, dir, model) == Approx(submodel).margin(1e-9));
    }
  }
}

TEST_CASE("lambda2 elements") {
  const auto none = CensoringModel::none();
  const auto bank = censoring_direction_bank();
  CHECK(lambda2_element(Observation{1.0, 0, 1, CovariateProfile{0.0}}, bank[0], none, 4.0) == 0.0);

  const auto expo = CensoringModel::exponential(0.3, 0.3);
  CHECK(lambda2_element(Observation{2.0, 0, 1, CovariateProfile{0.0}}, bank[0], expo, 4.0) ==
        Approx(1.0 - 0.6).margin(1e-12));
  CHECK(lambda2_element(Observation{2.0, 1, 1, CovariateProfile{0.0}}, bank[0], expo, 4.0) ==
        Approx(-0.6).margin(1e-12));
  // Administrative stop at tau is not a censoring jump.
  CHECK(lambda2_element(Observation{4.0, 0, 1, CovariateProfile{0.0}}, bank[0], expo, 4.0) ==
        Approx(-1.2).margin(1e-12));
  // alpha = t: jump X, compensator lambda X^2 / 2.
  CHECK(lambda2_element(Observation{2.0, 0, 0, CovariateProfile{0.0}}, bank[4], expo, 4.0) ==
        Approx(2.0 - 0.6).margin(1e-12));
}

TEST_CASE("lambda3 elements are centered") {
  const auto sc = scenario_s1();
  const auto bank = law_direction_bank();
  CHECK(lambda3_element(Observation{1.0, 1, 1, CovariateProfile{0.0}}, bank[0], sc.truth.treatment) == Approx(0.5));
  CHECK(lambda3_element(Observation{1.0, 1, 0, CovariateProfile{1.0}}, bank[0], sc.truth.treatment) == Approx(-0.5));
  CHECK(law_mean(bank[1], sc.truth.treatment) == Approx(0.5));
}

TEST_CASE("shipped elements have mean zero") {
  for (const auto& sc : {scenario_s1(), scenario_confounded()}) {
    const auto elements = shipped_elements(sc.truth);
    CHECK(elements.size() == 15);
    const auto data = generate_dataset(20000, sc.truth, 41);
    for (const auto& el : elements) {
      const auto m = mc_mean(data, el.evaluate);
      INFO(sc.name << " " << to_string(el.space) << " " << el.id << ": " << m.estimate << " se " << m.se);
      CHECK(std::abs(m.estimate) <= 4.0 * m.se + 1e-12);
    }
  }
}

TEST_CASE("efficient score is orthogonal to the nuisance tangent space") {
  const auto sc = scenario_s1();
  const auto nuis = oracle_nuisances(sc.truth);
  const TimeGrid grid(sc.truth.model.tau, 1000);
  const auto data = generate_dataset(20000, sc.truth, 43);
  const auto profiles = distinct_profiles(data);
  const ScoreFunction score(EstimatorKind::efficient, sc.truth.model.beta, nuis, grid, profiles);
  const ObservationFn u = [&](const Observation& o) { return score(o); };
  for (const auto& el : shipped_elements(sc.truth)) {
    const auto ip = mc_inner_product(data, u, el.evaluate);
    INFO(to_string(el.space) << " " << el.id << ": " << ip.estimate << " se " << ip.se);
    CHECK(std::abs(ip.estimate) <= 4.0 * ip.se + 1e-12);
  }
}

TEST_CASE("naive score is not orthogonal to lambda1") {
  const auto sc = scenario_s1();
  const auto data = generate_dataset(20000, sc.truth, 47);
  const auto bank = odds_direction_bank(sc.truth.model.tau);
  const auto& dir = direction(bank, "h=t");
  const ObservationFn naive = [&](const Observation& o) { return naive_score(o, sc.truth.model.beta, sc.truth.model.odds); };
  const ObservationFn el = [&](const Observation& o) { return lambda1_element(o, dir, sc.truth.model); };
  const auto ip = mc_inner_product(data, naive, el);
  CHECK(std::abs(ip.estimate) > 4.0 * ip.se);
}

TEST_CASE("literal boundary loses orthogonality to lambda1") {
  const auto sc = scenario_s1();
  const auto nuis = oracle_nuisances(sc.truth);
  const TimeGrid grid(sc.truth.model.tau, 1000);
  const auto data = generate_dataset(20000, sc.truth, 53);
  const auto profiles = distinct_profiles(data);
  const ScoreFunction literal(EstimatorKind::efficient, sc.truth.model.beta, nuis, grid, profiles,
                              H0Options{BoundaryMode::literal, kInfinity});
  const ObservationFn u = [&](const Observation& o) { return literal(o); };
  double worst = 0.0;
  for (const auto& dir : odds_direction_bank(sc.truth.model.tau)) {
    const auto ip = mc_inner_product(data, u, [&](const Observation& o) { return lambda1_element(o, dir, sc.truth.model); });
    worst = std::max(worst, std::abs(ip.estimate) / ip.se);
  }
  CHECK(worst > 4.0);
}

TEST_CASE("tower law holds for shipped processes") {
  const auto sc = scenario_confounded();
  const ProcessFn B = [](double t, int a, const CovariateProfile& z) { return 1.0 + a * t + z.first(); };
  for (double z1 : {0.0, 1.0}) {
    const auto check = tower_law_check(B, 1.0, CovariateProfile{z1}, sc.truth, 20000, 59);
    CHECK(check.gap <= 4.0 * check.se);
  }
  const auto origin = tower_law_check(B, 0.0, CovariateProfile{1.0}, sc.truth, 1000, 61);
  CHECK(origin.rhs == Approx(expect_given_z([&](int a) { return B(0.0, a, CovariateProfile{1.0}); },
                                            sc.truth.treatment.propensity(CovariateProfile{1.0}))));
}

TEST_CASE("Monte Carlo helpers validate their inputs") {
  const auto sc = scenario_s1();
  const ObservationFn one = [](const Observation&) { return 1.0; };
  CHECK_THROWS_AS(mc_inner_product(one, one, sc.truth, 999, 1), std::invalid_argument);
  const auto m = mc_inner_product(one, one, sc.truth, 1000, 1);
  CHECK(m.estimate == 1.0);
  CHECK(m.se == 0.0);
  const ProcessFn zero = [](double, int, const CovariateProfile&) { return 0.0; };
  CHECK_THROWS_AS(tower_law_check(zero, 5.0, CovariateProfile{0.0}, sc.truth, 10, 1), HorizonError);
}
