#pragma once

// Sample elements of the nuisance tangent spaces and Monte-Carlo inner
// products against them.
//
//   Lambda1: int {dh/(e lambda) - h/e} S dM     (perturbations R + gamma h)
//   Lambda2: int alpha dM_c                      (censoring hazard)
//   Lambda3: b(A, Z) - E[b(A, Z)]                (joint law of A, Z)

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <nlohmann/json.hpp>

#include "podds/errors.hpp"
#include "podds/model.hpp"
#include "podds/ide.hpp"
#include "podds/rng.hpp"

namespace podds {

enum class Space { lambda1, lambda2, lambda3 };

inline std::string to_string(Space s) {
  switch (s) {
    case Space::lambda1: return "Lambda1";
    case Space::lambda2: return "Lambda2";
    case Space::lambda3: return "Lambda3";
  }
  return "unknown";
}

/// h(t, z) with its t-derivative; h(0, z) must vanish.
struct OddsDirection {
  std::string id;
  std::function<double(double, const CovariateProfile&)> h;
  std::function<double(double, const CovariateProfile&)> dh;
};

/// alpha(t, a, z).
struct CensoringDirection {
  std::string id;
  std::function<double(double, int, const CovariateProfile&)> alpha;
};

/// b(a, z) before centering.
struct LawDirection {
  std::string id;
  std::function<double(int, const CovariateProfile&)> b;
};

using ObservationFn = std::function<double(const Observation&)>;

struct SpaceElement {
  Space space = Space::lambda1;
  std::string id;
  ObservationFn evaluate;
};

namespace detail {

template <class F>
double integrate_to(F&& f, double upper) {
  if (upper <= 0.0) return 0.0;
  return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, 0.0, upper, 8, 1e-12);
}

}  // namespace detail

/// Lambda1 element on one observation: jump delta {dh/r - h/(e+R)} at X minus
/// the compensator int_0^X {dh/(e+R) - h r/(e+R)^2} dt.
inline double lambda1_element(const Observation& obs, const OddsDirection& dir, const OddsModel& model) {
  detail::check_time(obs.x, model);
  const double e = std::exp(model.beta * obs.a);
  double jump = 0.0;
  if (obs.delta == 1) {
    const double r = model.odds.density(obs.x, obs.z);
    const double dh = dir.dh(obs.x, obs.z);
    if (r == 0.0 && dh != 0.0) throw Singularity("lambda1 element: zero hazard where the direction moves at t = " + std::to_string(obs.x));
    jump = (dh == 0.0 ? 0.0 : dh / r) - dir.h(obs.x, obs.z) / (e + model.odds.value(obs.x, obs.z));
  }
  auto compensator = [&](double t) {
    const double u = e + model.odds.value(t, obs.z);
    return dir.dh(t, obs.z) / u - dir.h(t, obs.z) * model.odds.density(t, obs.z) / (u * u);
  };
  return jump - detail::integrate_to(compensator, obs.x);
}

/// Lambda2 element: alpha(X) 1{delta = 0, X < tau} - int_0^X alpha lambda_c dt.
inline double lambda2_element(const Observation& obs, const CensoringDirection& dir, const CensoringModel& censoring,
                              double tau) {
  if (censoring.is_none()) return 0.0;
  const double jump = (obs.delta == 0 && obs.x < tau) ? dir.alpha(obs.x, obs.a, obs.z) : 0.0;
  auto compensator = [&](double t) { return dir.alpha(t, obs.a, obs.z) * censoring.hazard(t, obs.a, obs.z); };
  return jump - detail::integrate_to(compensator, obs.x);
}

/// E[b(A, Z)] as an exact sum over the discrete law.
inline double law_mean(const LawDirection& dir, const TreatmentModel& treatment) {
  double mean = 0.0;
  for (std::size_t k = 0; k < treatment.law.support.size(); ++k) {
    const auto& z = treatment.law.support[k];
    const double p = treatment.propensity(z);
    mean += treatment.law.prob[k] * (p * dir.b(1, z) + (1.0 - p) * dir.b(0, z));
  }
  return mean;
}

inline double lambda3_element(const Observation& obs, const LawDirection& dir, const TreatmentModel& treatment) {
  return dir.b(obs.a, obs.z) - law_mean(dir, treatment);
}

// =============================================================================
// Shipped direction banks
// =============================================================================

inline std::vector<OddsDirection> odds_direction_bank(double tau) {
  using Z = const CovariateProfile&;
  return {
      {"h=t", [](double t, Z) { return t; }, [](double, Z) { return 1.0; }},
      {"h=t^2", [](double t, Z) { return t * t; }, [](double t, Z) { return 2.0 * t; }},
      {"h=t*z1", [](double t, Z z) { return t * z.first(); }, [](double, Z z) { return z.first(); }},
      {"h=t*(tau-t)", [tau](double t, Z) { return t * (tau - t); }, [tau](double t, Z) { return tau - 2.0 * t; }},
      {"h=t^2*z1", [](double t, Z z) { return t * t * z.first(); }, [](double t, Z z) { return 2.0 * t * z.first(); }},
  };
}

inline std::vector<CensoringDirection> censoring_direction_bank() {
  using Z = const CovariateProfile&;
  return {
      {"alpha=1", [](double, int, Z) { return 1.0; }},
      {"alpha=a", [](double, int a, Z) { return static_cast<double>(a); }},
      {"alpha=z1", [](double, int, Z z) { return z.first(); }},
      {"alpha=t*a", [](double t, int a, Z) { return t * a; }},
      {"alpha=t", [](double t, int, Z) { return t; }},
  };
}

inline std::vector<LawDirection> law_direction_bank() {
  using Z = const CovariateProfile&;
  return {
      {"b=a", [](int a, Z) { return static_cast<double>(a); }},
      {"b=z1", [](int, Z z) { return z.first(); }},
      {"b=a*z1", [](int a, Z z) { return a * z.first(); }},
      {"b=(1-a)*z1", [](int a, Z z) { return (1 - a) * z.first(); }},
      {"b=exp(0.5a+0.3z1)", [](int a, Z z) { return std::exp(0.5 * a + 0.3 * z.first()); }},
  };
}

/// Every shipped direction wrapped as an observation functional under the truth.
inline std::vector<SpaceElement> shipped_elements(const Truth& truth) {
  std::vector<SpaceElement> out;
  const double tau = truth.model.tau;
  const double horizon = std::isfinite(tau) ? tau : 1.0;
  for (auto& dir : odds_direction_bank(horizon)) {
    out.push_back({Space::lambda1, dir.id,
                   [dir, model = truth.model](const Observation& o) { return lambda1_element(o, dir, model); }});
  }
  for (auto& dir : censoring_direction_bank()) {
    out.push_back({Space::lambda2, dir.id, [dir, c = truth.censoring, tau](const Observation& o) {
                     return lambda2_element(o, dir, c, tau);
                   }});
  }
  for (auto& dir : law_direction_bank()) {
    const double mean = law_mean(dir, truth.treatment);
    out.push_back({Space::lambda3, dir.id, [dir, mean](const Observation& o) { return dir.b(o.a, o.z) - mean; }});
  }
  return out;
}

// =============================================================================
// Monte-Carlo checks
// =============================================================================

struct McEstimate {
  double estimate = 0.0;
  double se = 0.0;
};

/// Sample mean and standard error of x_i y_i.
inline McEstimate mc_inner_product(std::span<const Observation> data, const ObservationFn& x, const ObservationFn& y) {
  const double n = static_cast<double>(data.size());
  if (data.size() < 2) throw std::invalid_argument("inner product needs at least two observations");
  double sum = 0.0;
  double sum_sq = 0.0;
  for (const auto& obs : data) {
    const double v = x(obs) * y(obs);
    sum += v;
    sum_sq += v * v;
  }
  const double mean = sum / n;
  const double var = std::max(0.0, (sum_sq - n * mean * mean) / (n - 1.0));
  return {mean, std::sqrt(var / n)};
}

/// Simulates n observations from the truth and takes the inner product.
inline McEstimate mc_inner_product(const ObservationFn& x, const ObservationFn& y, const Truth& truth, std::size_t n,
                                   std::uint64_t seed) {
  if (n < 1000) throw std::invalid_argument("mc_inner_product requires n >= 1000");
  const auto data = generate_dataset(n, truth, seed);
  return mc_inner_product(data, x, y);
}

/// Mean and standard error of f over the data.
inline McEstimate mc_mean(std::span<const Observation> data, const ObservationFn& f) {
  return mc_inner_product(data, f, [](const Observation&) { return 1.0; });
}

using ProcessFn = std::function<double(double t, int a, const CovariateProfile& z)>;

struct TowerLawCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  double gap = 0.0;
  double se = 0.0;
};

/// E[B(t,A,Z) Y(t) | Z = z] by simulation with Z held at z, against the exact
/// sum over A of pi B S(t|A,z) S_c(t|A,z).
inline TowerLawCheck tower_law_check(const ProcessFn& B, double t, const CovariateProfile& z, const Truth& truth,
                                     std::size_t n, std::uint64_t seed) {
  if (n < 2) throw std::invalid_argument("tower_law_check needs at least two draws");
  const auto& model = truth.model;
  detail::check_time(t, model);
  const double p = truth.treatment.propensity(z);
  double sum = 0.0;
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Stream stream(seed, i);
    const int a = stream.uniform() < p ? 1 : 0;
    const double event = sample_event_time(a, z, model, stream.uniform());
    const double censor = truth.censoring.sample(a, z, stream.uniform());
    const double x = std::min({event, censor, model.tau});
    const double v = x >= t ? B(t, a, z) : 0.0;
    sum += v;
    sum_sq += v * v;
  }
  const double dn = static_cast<double>(n);
  TowerLawCheck out;
  out.lhs = sum / dn;
  out.se = std::sqrt(std::max(0.0, (sum_sq - dn * out.lhs * out.lhs) / (dn - 1.0)) / dn);
  out.rhs = expect_given_z(
      [&](int a) { return B(t, a, z) * survival(t, a, z, model) * truth.censoring.survival(t, a, z); }, p);
  out.gap = std::abs(out.lhs - out.rhs);
  return out;
}

struct VerificationEntry {
  std::string space;
  std::string id;
  double estimate = 0.0;
  double se = 0.0;
  bool pass = false;
};

inline nlohmann::json to_json(const VerificationEntry& e) {
  return {{"space", e.space}, {"element", e.id}, {"estimate", e.estimate}, {"se", e.se}, {"pass", e.pass}};
}

}  // namespace podds
