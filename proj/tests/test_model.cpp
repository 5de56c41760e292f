#include <cmath>
#include <numbers>
#include <vector>

#include "catch_amalgamated.hpp"
#include "podds/model.hpp"
#include "podds/rng.hpp"

using namespace podds;
using Catch::Approx;

namespace {

OddsModel linear_odds(double beta, double tau = kInfinity) {
  return OddsModel{beta, LogLogisticOdds{1.0, 1.0, {}}, tau};
}

OddsModel s1_model() { return OddsModel{std::numbers::ln2, LogLogisticOdds{1.0, 1.0, {0.5}}, 4.0}; }

SplineOdds flat_spline() {
  // Flat on [1, 2]: r = 0 there.
  return SplineOdds({0.0, 1.0, 2.0, 3.0}, {{CovariateProfile{}, {0.0, 1.0, 1.0, 2.0}}});
}

Truth unit_truth(double beta, CensoringModel censoring, double tau, double p = 0.5) {
  return Truth{linear_odds(beta, tau), censoring,
               TreatmentModel{Propensity::constant(p), CovariateLaw::degenerate(CovariateProfile{})}};
}

}  // namespace

TEST_CASE("survival matches closed-form values") {
  const CovariateProfile z;
  CHECK(survival(0.0, 0, z, linear_odds(0.3)) == 1.0);
  CHECK(survival(0.0, 1, z, linear_odds(0.3)) == 1.0);
  CHECK(survival(1.0, 0, z, linear_odds(0.0)) == Approx(0.5).epsilon(1e-15));
  CHECK(survival(1.0, 1, z, linear_odds(std::numbers::ln2)) == Approx(2.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("hazard and cumulative hazard match closed-form values") {
  const CovariateProfile z;
  CHECK(hazard(1.0, 1, z, linear_odds(std::numbers::ln2)) == Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(cumulative_hazard(1.0, 0, z, linear_odds(0.0)) == Approx(std::numbers::ln2).epsilon(1e-15));
  CHECK(cumulative_hazard(0.0, 1, z, linear_odds(1.0)) == 0.0);
}

TEST_CASE("times outside [0, tau] are rejected") {
  const CovariateProfile z;
  CHECK_THROWS_AS(survival(-0.1, 0, z, linear_odds(0.0)), HorizonError);
  CHECK_THROWS_AS(hazard(5.0, 0, z, linear_odds(0.0, 4.0)), HorizonError);
  CHECK_THROWS_AS(cumulative_hazard(std::nan(""), 0, z, linear_odds(0.0)), HorizonError);
}

TEST_CASE("log odds ratio is beta wherever R > 0") {
  const CovariateProfile z;
  CHECK(log_odds_ratio(2.0, z, linear_odds(-1.5)) == Approx(-1.5).margin(1e-12));
  CHECK_THROWS_AS(log_odds_ratio(0.0, z, linear_odds(0.7)), DegenerateOdds);
}

TEST_CASE("property: survival, hazard and cumulative hazard are consistent") {
  Stream stream(7);
  const auto model = s1_model();
  for (int i = 0; i < 200; ++i) {
    const double t = 0.01 + 3.9 * stream.uniform();
    const int a = stream.uniform() < 0.5 ? 0 : 1;
    const CovariateProfile z{stream.uniform() < 0.5 ? 0.0 : 1.0};
    const double s = survival(t, a, z, model);
    CHECK(-std::log(s) == Approx(cumulative_hazard(t, a, z, model)).epsilon(1e-12));
    CHECK(log_odds_ratio(t, z, model) == Approx(model.beta).margin(1e-12));
    const double h = 1e-6;
    const double fd = (cumulative_hazard(t + h, a, z, model) - cumulative_hazard(t - h, a, z, model)) / (2 * h);
    CHECK(fd == Approx(hazard(t, a, z, model)).margin(1e-6));
  }
}

TEST_CASE("sample_event_time inverts survival") {
  const CovariateProfile z;
  CHECK(sample_event_time(0, z, linear_odds(0.0), 0.5) == Approx(1.0).epsilon(1e-14));
  CHECK(sample_event_time(1, z, linear_odds(std::numbers::ln2), 0.2) == Approx(8.0).epsilon(1e-14));
  CHECK(sample_event_time(1, z, linear_odds(std::numbers::ln2, 4.0), 0.2) == 4.0);
  CHECK_THROWS_AS(sample_event_time(0, z, linear_odds(0.0), 0.0), std::domain_error);
  CHECK_THROWS_AS(sample_event_time(0, z, linear_odds(0.0), 1.0), std::domain_error);

  Stream stream(11);
  const auto model = s1_model();
  for (int i = 0; i < 100; ++i) {
    const double u = 0.25 + 0.7 * stream.uniform();
    const CovariateProfile zi{stream.uniform() < 0.5 ? 0.0 : 1.0};
    const double t = sample_event_time(1, zi, model, u);
    if (t < model.tau) CHECK(survival(t, 1, zi, model) == Approx(u).epsilon(1e-12));
  }
}

TEST_CASE("spline odds invert and interpolate monotonically") {
  const std::vector<double> knots{0.0, 0.5, 1.0, 1.5, 2.0};
  const SplineOdds spline(knots, {{CovariateProfile{0.0}, {0.0, 0.4, 0.9, 1.5, 2.2}},
                                  {CovariateProfile{1.0}, {0.0, 0.7, 1.5, 2.5, 3.6}}});
  const OddsModel model{0.3, spline, 2.0};
  for (double z : {0.0, 1.0}) {
    const CovariateProfile zp{z};
    double previous = 0.0;
    for (int i = 1; i <= 100; ++i) {
      const double t = 0.02 * i;
      const double R = model.odds.value(t, zp);
      CHECK(R >= previous);
      previous = R;
      CHECK(model.odds.inverse(R, zp) == Approx(t).margin(1e-10));
    }
  }
  CHECK(model.odds.value(1.0, CovariateProfile{1.0}) == Approx(1.5).epsilon(1e-14));
  CHECK_THROWS_AS(model.odds.value(1.0, CovariateProfile{2.0}), InvalidModel);
}

TEST_CASE("invalid odds and laws are rejected") {
  CHECK_THROWS_AS(OddsFn(LogLogisticOdds{-1.0, 1.0, {}}), InvalidModel);
  CHECK_THROWS_AS(OddsFn(LogLogisticOdds{1.0, 0.0, {}}), InvalidModel);
  CHECK_THROWS_AS(SplineOdds({0.0, 1.0, 2.0, 3.0}, {{CovariateProfile{}, {0.0, 1.0, 0.5, 2.0}}}), InvalidModel);
  CHECK_THROWS_AS(SplineOdds({0.0, 1.0, 2.0, 3.0}, {{CovariateProfile{}, {0.1, 1.0, 1.5, 2.0}}}), InvalidModel);
  CHECK_THROWS_AS(CensoringModel::exponential(-0.1, 0.1), InvalidModel);
  CHECK_THROWS_AS(Propensity::constant(1.5), InvalidModel);
  CHECK_THROWS_AS((CovariateLaw{{CovariateProfile{0.0}, CovariateProfile{1.0}}, {0.3, 0.3}}.validate()), InvalidModel);
}

TEST_CASE("generate_dataset respects the sampling design") {
  SECTION("no censoring and no horizon: every subject fails") {
    const auto data = generate_dataset(500, unit_truth(0.0, CensoringModel::none(), kInfinity), 3);
    for (const auto& obs : data) CHECK(obs.delta == 1);
  }
  SECTION("propensity one treats everybody") {
    const auto data = generate_dataset(200, unit_truth(0.0, CensoringModel::none(), kInfinity, 1.0), 3);
    for (const auto& obs : data) CHECK(obs.a == 1);
  }
  SECTION("administrative censoring at tau") {
    const auto data = generate_dataset(2000, unit_truth(0.0, CensoringModel::none(), 1.0, 0.0), 5);
    double survived = 0.0;
    for (const auto& obs : data) {
      CHECK(obs.x <= 1.0);
      if (obs.delta == 0) {
        CHECK(obs.x == 1.0);
        survived += 1.0;
      }
    }
    // S(1 | 0) = 0.5; binomial sd at n = 2000 is 0.0112.
    CHECK(survived / 2000.0 == Approx(0.5).margin(4 * 0.0112));
  }
  SECTION("subject i depends only on its own substream") {
    const auto truth = unit_truth(0.5, CensoringModel::exponential(0.3, 0.2), 4.0);
    const auto small = generate_dataset(10, truth, 99);
    const auto large = generate_dataset(50, truth, 99);
    for (std::size_t i = 0; i < small.size(); ++i) {
      CHECK(small[i].x == large[i].x);
      CHECK(small[i].delta == large[i].delta);
      CHECK(small[i].a == large[i].a);
    }
    const auto other = generate_dataset(10, truth, 100);
    CHECK(other[0].x != small[0].x);
  }
}

TEST_CASE("log_likelihood matches the closed form") {
  const OddsFn odds = LogLogisticOdds{1.0, 1.0, {}};
  const TreatmentModel treatment{Propensity::constant(0.5), CovariateLaw::degenerate(CovariateProfile{})};
  const Observation event{1.0, 1, 0, CovariateProfile{}};
  const LikelihoodTerms outcome_only{false, false, kInfinity};
  CHECK(log_likelihood(event, 0.0, odds, CensoringModel::none(), treatment, outcome_only) ==
        Approx(-2.0 * std::numbers::ln2).epsilon(1e-15));

  const auto censoring = CensoringModel::exponential(0.4, 0.4);
  const Observation censored{1.0, 0, 0, CovariateProfile{}};
  const double full = log_likelihood(censored, 0.0, odds, censoring, treatment);
  CHECK(full == Approx(-std::numbers::ln2 + std::log(0.4) - 0.4 + std::log(0.5)).epsilon(1e-14));

  const OddsFn flat = flat_spline();
  const Observation in_flat{1.5, 1, 0, CovariateProfile{}};
  CHECK(is_degenerate(log_likelihood(in_flat, 0.0, flat, CensoringModel::none(), treatment, outcome_only)));
}

TEST_CASE("naive score is the beta derivative of the log-likelihood") {
  const auto model = s1_model();
  const TreatmentModel treatment{Propensity::constant(0.5), CovariateLaw{{CovariateProfile{0.0}, CovariateProfile{1.0}}, {0.5, 0.5}}};
  Stream stream(13);
  for (int i = 0; i < 100; ++i) {
    Observation obs{0.05 + 3.9 * stream.uniform(), stream.uniform() < 0.6 ? 1 : 0, stream.uniform() < 0.5 ? 0 : 1,
                    CovariateProfile{stream.uniform() < 0.5 ? 0.0 : 1.0}};
    const double beta = -1.0 + 2.0 * stream.uniform();
    const double h = 1e-5;
    const LikelihoodTerms terms{false, false, kInfinity};
    const double fd = (log_likelihood(obs, beta + h, model.odds, CensoringModel::none(), treatment, terms) -
                       log_likelihood(obs, beta - h, model.odds, CensoringModel::none(), treatment, terms)) /
                      (2 * h);
    CHECK(naive_score(obs, beta, model.odds) == Approx(fd).margin(1e-6));
  }
  CHECK(naive_score(Observation{1.0, 1, 0, CovariateProfile{0.0}}, 0.3, model.odds) == 0.0);
}

TEST_CASE("random censoring fraction of the exponential design") {
  // beta = 0, R = t, no horizon: P(C < T) = int lambda e^{-lambda c} / (1 + c) dc.
  const auto truth = unit_truth(0.0, CensoringModel::exponential(1.0, 1.0), kInfinity);
  const double expected = std::exp(1.0) * std::expint(-1.0) * -1.0;  // e E1(1)
  CHECK(random_censoring_fraction(truth) == Approx(expected).epsilon(1e-9));
  CHECK(random_censoring_fraction(unit_truth(0.0, CensoringModel::none(), 4.0)) == 0.0);
}

TEST_CASE("substreams are deterministic and distinct") {
  Stream a(5, 0), b(5, 0), c(5, 1);
  const double first = a.uniform();
  CHECK(first == b.uniform());
  CHECK(first != c.uniform());
  for (int i = 0; i < 1000; ++i) {
    const double u = a.uniform();
    CHECK(u > 0.0);
    CHECK(u < 1.0);
  }
}
