#pragma once

// General proportional odds model
//
//     logit S(t | A, Z) = beta * A - G(t, Z),   R(t, Z) = exp{G(t, Z)},
//
// with binary treatment A, baseline covariates Z and an odds function R that
// is left unrestricted in (t, Z). Survival, hazard and likelihood follow in
// closed form:
//
//     S(t | A, Z)      = e^{beta A} / (e^{beta A} + R(t, Z))
//     lambda(t | A, Z) = r(t, Z)    / (e^{beta A} + R(t, Z)),   r = dR/dt.

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

// pchip.hpp in Boost 1.74 uses isnan without including its declaration.
#include <boost/math/special_functions/fpclassify.hpp>
#include <boost/math/interpolators/pchip.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/toms748_solve.hpp>

#include "podds/errors.hpp"
#include "podds/rng.hpp"

namespace podds {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

// =============================================================================
// Covariates
// =============================================================================

/// Baseline covariate vector Z.
struct CovariateProfile {
  std::vector<double> values;

  CovariateProfile() = default;
  CovariateProfile(std::initializer_list<double> v) : values(v) {}
  explicit CovariateProfile(std::vector<double> v) : values(std::move(v)) {}

  std::size_t size() const noexcept { return values.size(); }
  bool empty() const noexcept { return values.empty(); }
  double operator[](std::size_t i) const { return values[i]; }

  /// z_1, or 0 for an empty profile.
  double first() const noexcept { return values.empty() ? 0.0 : values.front(); }

  std::string str() const {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < values.size(); ++i) os << (i ? "," : "") << values[i];
    os << ')';
    return os.str();
  }

  bool operator==(const CovariateProfile&) const = default;
  bool operator<(const CovariateProfile& other) const { return values < other.values; }
};

/// gamma' z. An empty coefficient vector means no covariate effect.
inline double linear_predictor(const std::vector<double>& coef, const CovariateProfile& z) {
  if (coef.empty()) return 0.0;
  if (coef.size() != z.size()) {
    throw InvalidModel("coefficient length " + std::to_string(coef.size()) +
                       " does not match covariate dimension " + std::to_string(z.size()));
  }
  return std::inner_product(coef.begin(), coef.end(), z.values.begin(), 0.0);
}

/// Finite discrete law of Z.
struct CovariateLaw {
  std::vector<CovariateProfile> support;
  std::vector<double> prob;

  static CovariateLaw degenerate(CovariateProfile z) { return {{std::move(z)}, {1.0}}; }

  void validate() const {
    if (support.empty() || support.size() != prob.size()) {
      throw InvalidModel("covariate law needs matching, non-empty support and probabilities");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < support.size(); ++i) {
      if (!(prob[i] > 0.0) || !std::isfinite(prob[i])) {
        throw InvalidModel("covariate support probabilities must be positive");
      }
      if (support[i].size() != support.front().size()) {
        throw InvalidModel("covariate support points differ in dimension");
      }
      for (double v : support[i].values) {
        if (!std::isfinite(v)) throw InvalidModel("covariate values must be finite");
      }
      total += prob[i];
    }
    if (std::abs(total - 1.0) > 1e-12) throw InvalidModel("covariate probabilities must sum to 1");
  }

  std::size_t dim() const { return support.empty() ? 0 : support.front().size(); }

  /// Inverse-CDF draw from a uniform u in (0, 1).
  const CovariateProfile& draw(double u) const {
    double cumulative = 0.0;
    for (std::size_t i = 0; i + 1 < support.size(); ++i) {
      cumulative += prob[i];
      if (u < cumulative) return support[i];
    }
    return support.back();
  }

  /// P(Z = z); zero off the support.
  double mass(const CovariateProfile& z) const {
    for (std::size_t i = 0; i < support.size(); ++i) {
      if (support[i] == z) return prob[i];
    }
    return 0.0;
  }
};

// =============================================================================
// Odds functions R(t, z) and their densities r(t, z)
// =============================================================================

/// R(t, z) = (t / alpha)^kappa * exp(gamma' z).
struct LogLogisticOdds {
  double alpha = 1.0;
  double kappa = 1.0;
  std::vector<double> gamma;

  void validate() const {
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw InvalidModel("log-logistic alpha must be positive");
    if (!(kappa > 0.0) || !std::isfinite(kappa)) throw InvalidModel("log-logistic kappa must be positive");
    for (double g : gamma) {
      if (!std::isfinite(g)) throw InvalidModel("log-logistic gamma must be finite");
    }
  }

  double value(double t, const CovariateProfile& z) const {
    if (t <= 0.0) return 0.0;
    return std::pow(t / alpha, kappa) * std::exp(linear_predictor(gamma, z));
  }

  double density(double t, const CovariateProfile& z) const {
    const double scale = std::exp(linear_predictor(gamma, z));
    if (t <= 0.0) {
      if (kappa == 1.0) return scale / alpha;
      return kappa > 1.0 ? 0.0 : kInfinity;
    }
    return kappa / alpha * std::pow(t / alpha, kappa - 1.0) * scale;
  }

  /// Smallest t with R(t, z) = target.
  double inverse(double target, const CovariateProfile& z) const {
    if (target <= 0.0) return 0.0;
    return alpha * std::pow(target * std::exp(-linear_predictor(gamma, z)), 1.0 / kappa);
  }
};

/// Monotone cubic (PCHIP) interpolation of tabulated R values, one table per
/// covariate profile, so G(t, z) is unrestricted across the support. Beyond
/// the last knot R continues linearly with its end slope.
class SplineOdds {
 public:
  struct Profile {
    CovariateProfile z;
    std::vector<double> values;
  };

  SplineOdds(std::vector<double> knots, std::vector<Profile> profiles)
      : knots_(std::move(knots)), profiles_(std::move(profiles)) {
    if (knots_.size() < 4) throw InvalidModel("spline odds need at least 4 knots");
    if (knots_.front() != 0.0) throw InvalidModel("spline odds knots must start at t = 0");
    for (std::size_t i = 1; i < knots_.size(); ++i) {
      if (!(knots_[i] > knots_[i - 1])) throw InvalidModel("spline odds knots must increase strictly");
    }
    if (profiles_.empty()) throw InvalidModel("spline odds need at least one profile");
    interps_.reserve(profiles_.size());
    for (const auto& p : profiles_) {
      if (p.values.size() != knots_.size()) throw InvalidModel("spline odds table length mismatch");
      if (p.values.front() != 0.0) throw InvalidModel("spline odds require R(0, z) = 0");
      for (std::size_t i = 1; i < p.values.size(); ++i) {
        if (!std::isfinite(p.values[i]) || p.values[i] < p.values[i - 1]) {
          throw InvalidModel("spline odds values must be finite and nondecreasing");
        }
      }
      if (!(p.values.back() > 0.0)) throw InvalidModel("spline odds must increase somewhere");
      const std::size_t n = knots_.size();
      const double left = (p.values[1] - p.values[0]) / (knots_[1] - knots_[0]);
      const double right = (p.values[n - 1] - p.values[n - 2]) / (knots_[n - 1] - knots_[n - 2]);
      auto x = knots_;
      auto y = p.values;
      interps_.emplace_back(std::move(x), std::move(y), left, right);
      end_slope_.push_back(right);
    }
  }

  const std::vector<double>& knots() const noexcept { return knots_; }
  const std::vector<Profile>& profiles() const noexcept { return profiles_; }

  double value(double t, const CovariateProfile& z) const {
    const std::size_t i = index(z);
    if (t <= 0.0) return 0.0;
    if (t >= knots_.back()) return profiles_[i].values.back() + end_slope_[i] * (t - knots_.back());
    return std::max(0.0, interps_[i](t));
  }

  double density(double t, const CovariateProfile& z) const {
    const std::size_t i = index(z);
    if (t >= knots_.back()) return end_slope_[i];
    return std::max(0.0, interps_[i].prime(std::max(t, 0.0)));
  }

  double inverse(double target, const CovariateProfile& z) const {
    if (target <= 0.0) return 0.0;
    double hi = knots_.back();
    for (int doubling = 0; value(hi, z) < target; ++doubling) {
      if (doubling == 64 || !std::isfinite(hi)) {
        std::ostringstream os;
        os << "cannot bracket R(t," << z.str() << ") = " << target << ": R(" << hi
           << ") = " << value(hi, z) << " after " << doubling << " doublings";
        throw InversionError(os.str());
      }
      hi *= 2.0;
    }
    auto f = [&](double t) { return value(t, z) - target; };
    std::uintmax_t iters = 200;
    auto tol = [](double a, double b) { return std::abs(b - a) <= 1e-14 * std::max(1.0, std::abs(b)); };
    const double f_lo = f(0.0);
    const double f_hi = f(hi);
    if (f_hi == 0.0) return hi;
    const auto [lo_t, hi_t] = boost::math::tools::toms748_solve(f, 0.0, hi, f_lo, f_hi, tol, iters);
    if (iters >= 200) {
      std::ostringstream os;
      os << "R(t," << z.str() << ") = " << target << " did not converge in [0, " << hi << "]";
      throw InversionError(os.str());
    }
    return 0.5 * (lo_t + hi_t);
  }

 private:
  using Interpolator = boost::math::interpolators::pchip<std::vector<double>>;

  std::size_t index(const CovariateProfile& z) const {
    for (std::size_t i = 0; i < profiles_.size(); ++i) {
      if (profiles_[i].z == z) return i;
    }
    throw InvalidModel("spline odds have no table for covariate profile " + z.str());
  }

  std::vector<double> knots_;
  std::vector<Profile> profiles_;
  std::vector<Interpolator> interps_;
  std::vector<double> end_slope_;
};

/// Type-erased odds function: one of the shipped R families.
class OddsFn {
 public:
  OddsFn() = default;
  OddsFn(LogLogisticOdds f) : impl_(std::move(f)) { std::get<LogLogisticOdds>(impl_).validate(); }
  OddsFn(SplineOdds f) : impl_(std::move(f)) {}

  double value(double t, const CovariateProfile& z) const {
    return std::visit([&](const auto& f) { return f.value(t, z); }, impl_);
  }
  double density(double t, const CovariateProfile& z) const {
    return std::visit([&](const auto& f) { return f.density(t, z); }, impl_);
  }
  double inverse(double target, const CovariateProfile& z) const {
    return std::visit([&](const auto& f) { return f.inverse(target, z); }, impl_);
  }

  std::string family() const {
    return std::holds_alternative<LogLogisticOdds>(impl_) ? "log-logistic" : "spline";
  }
  const LogLogisticOdds* log_logistic() const { return std::get_if<LogLogisticOdds>(&impl_); }
  const SplineOdds* spline() const { return std::get_if<SplineOdds>(&impl_); }

 private:
  std::variant<LogLogisticOdds, SplineOdds> impl_;
};

/// Truth object: beta, the odds function, and the follow-up horizon tau.
struct OddsModel {
  double beta = 0.0;
  OddsFn odds;
  double tau = kInfinity;
};

// =============================================================================
// Censoring and treatment laws
// =============================================================================

/// Censoring hazard given (A, Z). Shipped families: none, or exponential with
/// one rate per arm.
class CensoringModel {
 public:
  static CensoringModel none() { return CensoringModel{}; }
  static CensoringModel exponential(double rate_control, double rate_treated) {
    if (!(rate_control >= 0.0) || !(rate_treated >= 0.0) || !std::isfinite(rate_control) ||
        !std::isfinite(rate_treated)) {
      throw InvalidModel("censoring rates must be finite and nonnegative");
    }
    CensoringModel c;
    c.rate_ = {rate_control, rate_treated};
    c.exponential_ = true;
    return c;
  }

  bool is_none() const noexcept { return !exponential_; }
  double rate(int a) const noexcept { return rate_[a != 0]; }

  double hazard(double /*t*/, int a, const CovariateProfile& /*z*/) const noexcept { return rate(a); }
  double cumulative_hazard(double t, int a, const CovariateProfile& /*z*/) const noexcept {
    return rate(a) * std::max(t, 0.0);
  }
  double survival(double t, int a, const CovariateProfile& z) const noexcept {
    return std::exp(-cumulative_hazard(t, a, z));
  }

  /// Censoring time from a uniform draw; infinite when there is no hazard.
  double sample(int a, const CovariateProfile& /*z*/, double u) const noexcept {
    const double lambda = rate(a);
    return lambda > 0.0 ? -std::log(u) / lambda : kInfinity;
  }

 private:
  std::array<double, 2> rate_{0.0, 0.0};
  bool exponential_ = false;
};

/// pi(z) = P(A = 1 | Z = z): constant, or logistic in (1, z).
class Propensity {
 public:
  static constexpr double kClamp = 1e-6;

  static Propensity constant(double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidModel("constant propensity must lie in [0, 1]");
    Propensity out;
    out.constant_ = p;
    return out;
  }
  /// coef[0] is the intercept, coef[1..] the slopes on z. Values are clamped
  /// to [1e-6, 1 - 1e-6].
  static Propensity logistic(std::vector<double> coef) {
    if (coef.empty()) throw InvalidModel("logistic propensity needs an intercept");
    for (double c : coef) {
      if (!std::isfinite(c)) throw InvalidModel("logistic propensity coefficients must be finite");
    }
    Propensity out;
    out.coef_ = std::move(coef);
    return out;
  }

  bool is_constant() const noexcept { return coef_.empty(); }
  const std::vector<double>& coefficients() const noexcept { return coef_; }
  double constant_value() const noexcept { return constant_; }

  double operator()(const CovariateProfile& z) const {
    if (coef_.empty()) return constant_;
    if (coef_.size() != z.size() + 1) throw InvalidModel("logistic propensity dimension mismatch");
    double eta = coef_[0];
    for (std::size_t j = 0; j < z.size(); ++j) eta += coef_[j + 1] * z[j];
    const double p = 1.0 / (1.0 + std::exp(-eta));
    return std::clamp(p, kClamp, 1.0 - kClamp);
  }

 private:
  double constant_ = 0.5;
  std::vector<double> coef_;
};

/// Joint law of (A, Z) factorized as pi(z)^a (1 - pi(z))^(1-a) f_Z(z).
struct TreatmentModel {
  Propensity propensity = Propensity::constant(0.5);
  CovariateLaw law;
};

/// Everything needed to simulate data: outcome model plus censoring and
/// treatment mechanisms.
struct Truth {
  OddsModel model;
  CensoringModel censoring;
  TreatmentModel treatment;
};

/// One subject: X = min(T, C, tau), delta = 1{T <= min(C, tau)}.
struct Observation {
  double x = 0.0;
  int delta = 0;
  int a = 0;
  CovariateProfile z;
};

// =============================================================================
// Closed-form model quantities
// =============================================================================

namespace detail {

inline void check_time(double t, const OddsModel& model) {
  if (!(t >= 0.0) || t > model.tau * (1.0 + 1e-12)) {
    std::ostringstream os;
    os << "time " << t << " outside [0, tau = " << model.tau << "]";
    throw HorizonError(os.str());
  }
}

inline void check_arm(int a) {
  if (a != 0 && a != 1) throw std::invalid_argument("treatment must be 0 or 1");
}

inline double odds_value(double t, const CovariateProfile& z, const OddsFn& odds) {
  const double R = odds.value(t, z);
  if (!std::isfinite(R) || R < 0.0) {
    std::ostringstream os;
    os << "odds function R(" << t << "," << z.str() << ") = " << R << " is invalid";
    throw InvalidModel(os.str());
  }
  return R;
}

inline double odds_density(double t, const CovariateProfile& z, const OddsFn& odds) {
  const double r = odds.density(t, z);
  if (std::isnan(r) || r < 0.0) {
    std::ostringstream os;
    os << "odds density r(" << t << "," << z.str() << ") = " << r << " is invalid";
    throw InvalidModel(os.str());
  }
  return r;
}

}  // namespace detail

/// S(t | a, z) = e^{beta a} / (e^{beta a} + R(t, z)).
inline double survival(double t, int a, const CovariateProfile& z, const OddsModel& model) {
  detail::check_time(t, model);
  detail::check_arm(a);
  const double e = std::exp(model.beta * a);
  return e / (e + detail::odds_value(t, z, model.odds));
}

/// lambda(t | a, z) = r(t, z) / (e^{beta a} + R(t, z)).
inline double hazard(double t, int a, const CovariateProfile& z, const OddsModel& model) {
  detail::check_time(t, model);
  detail::check_arm(a);
  const double e = std::exp(model.beta * a);
  return detail::odds_density(t, z, model.odds) / (e + detail::odds_value(t, z, model.odds));
}

/// Lambda(t | a, z) = log{(e^{beta a} + R) / e^{beta a}} = -log S(t | a, z).
inline double cumulative_hazard(double t, int a, const CovariateProfile& z, const OddsModel& model) {
  detail::check_time(t, model);
  detail::check_arm(a);
  const double e = std::exp(model.beta * a);
  return std::log1p(detail::odds_value(t, z, model.odds) / e);
}

/// logit S(t | 1, z) - logit S(t | 0, z). Equal to beta wherever R(t, z) > 0.
inline double log_odds_ratio(double t, const CovariateProfile& z, const OddsModel& model) {
  detail::check_time(t, model);
  const double R = detail::odds_value(t, z, model.odds);
  if (!(R > 0.0)) {
    std::ostringstream os;
    os << "R(" << t << "," << z.str() << ") = 0: survival odds are infinite";
    throw DegenerateOdds(os.str());
  }
  auto logit_survival = [&](int a) {
    const double e = std::exp(model.beta * a);
    const double s = e / (e + R);
    const double s_bar = R / (e + R);
    return std::log(s) - std::log(s_bar);
  };
  return logit_survival(1) - logit_survival(0);
}

/// Event time with S(t | a, z) = u, capped at tau.
inline double sample_event_time(int a, const CovariateProfile& z, const OddsModel& model, double u) {
  detail::check_arm(a);
  if (!(u > 0.0 && u < 1.0)) throw std::domain_error("uniform draw must lie in (0, 1)");
  const double e = std::exp(model.beta * a);
  const double t = model.odds.inverse(e * (1.0 - u) / u, z);
  if (!std::isfinite(t) || t < 0.0) {
    std::ostringstream os;
    os << "inversion of R(., " << z.str() << ") returned " << t;
    throw InversionError(os.str());
  }
  return std::min(t, model.tau);
}

/// Simulates n i.i.d. subjects. Subject i draws only from substream (seed, i).
inline std::vector<Observation> generate_dataset(std::size_t n, const OddsModel& model,
                                                 const CensoringModel& censoring,
                                                 const TreatmentModel& treatment, std::uint64_t seed) {
  treatment.law.validate();
  std::vector<Observation> data;
  data.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Stream stream(seed, i);
    const double u_z = stream.uniform();
    const double u_a = stream.uniform();
    const double u_t = stream.uniform();
    const double u_c = stream.uniform();

    Observation obs;
    obs.z = treatment.law.draw(u_z);
    obs.a = u_a < treatment.propensity(obs.z) ? 1 : 0;
    const double event = sample_event_time(obs.a, obs.z, model, u_t);
    const double censor = censoring.sample(obs.a, obs.z, u_c);
    obs.x = std::min({event, censor, model.tau});
    obs.delta = (event < model.tau && event <= censor) ? 1 : 0;
    data.push_back(std::move(obs));
  }
  return data;
}

inline std::vector<Observation> generate_dataset(std::size_t n, const Truth& truth, std::uint64_t seed) {
  return generate_dataset(n, truth.model, truth.censoring, truth.treatment, seed);
}

/// Which beta-free factors of the single-subject likelihood to include.
struct LikelihoodTerms {
  bool censoring = true;
  bool treatment = true;
  /// Administrative censoring time; a subject with delta = 0 at X >= tau
  /// contributes exp{-Lambda_c(tau)} without a censoring-hazard factor.
  double tau = kInfinity;
};

/// Single-subject log-likelihood. Returns -infinity (the degenerate sentinel)
/// when an observed event sits where r(X, Z) = 0.
inline double log_likelihood(const Observation& obs, double beta, const OddsFn& odds,
                             const CensoringModel& censoring, const TreatmentModel& treatment,
                             const LikelihoodTerms& terms = {}) {
  detail::check_arm(obs.a);
  const double e = std::exp(beta * obs.a);
  const double R = detail::odds_value(obs.x, obs.z, odds);
  double ll = std::log(e) - std::log(e + R);
  if (obs.delta == 1) {
    const double r = detail::odds_density(obs.x, obs.z, odds);
    if (!(r > 0.0)) return -kInfinity;
    ll += std::log(r) - std::log(e + R);
  }
  if (terms.censoring) {
    const bool administrative = obs.x >= terms.tau * (1.0 - 1e-12);
    if (obs.delta == 0 && !administrative) ll += std::log(censoring.hazard(obs.x, obs.a, obs.z));
    ll -= censoring.cumulative_hazard(obs.x, obs.a, obs.z);
  }
  if (terms.treatment) {
    const double p = treatment.propensity(obs.z);
    ll += std::log(obs.a == 1 ? p : 1.0 - p) + std::log(treatment.law.mass(obs.z));
  }
  return ll;
}

inline bool is_degenerate(double log_lik) noexcept { return log_lik == -kInfinity; }

/// Likelihood score for beta with R held fixed,
///   -int_0^tau A S(t | A, Z) dM(t) = -A [delta S(X) - {1 - S(X)}],
/// using int_0^X S lambda dt = 1 - S(X).
inline double naive_score(const Observation& obs, double beta, const OddsFn& odds) {
  if (obs.a == 0) return 0.0;
  const double e = std::exp(beta);
  const double R = detail::odds_value(obs.x, obs.z, odds);
  const double s = e / (e + R);
  const double s_bar = R / (e + R);
  return -(obs.delta * s - s_bar);
}

/// Exact probability that a subject is randomly (non-administratively)
/// censored, by adaptive quadrature over the censoring density.
inline double random_censoring_fraction(const Truth& truth) {
  const auto& law = truth.treatment.law;
  law.validate();
  double total = 0.0;
  for (std::size_t i = 0; i < law.support.size(); ++i) {
    const auto& z = law.support[i];
    const double p1 = truth.treatment.propensity(z);
    for (int a = 0; a <= 1; ++a) {
      const double lambda = truth.censoring.rate(a);
      if (lambda <= 0.0) continue;
      auto integrand = [&](double c) { return lambda * std::exp(-lambda * c) * survival(c, a, z, truth.model); };
      const double upper = std::isfinite(truth.model.tau) ? truth.model.tau : 50.0 / lambda;
      const double part = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(integrand, 0.0, upper, 15, 1e-12);
      total += law.prob[i] * (a == 1 ? p1 : 1.0 - p1) * part;
    }
  }
  return total;
}

}  // namespace podds
