#pragma once

// Nuisance triple (R with r, S_c, pi) used by the estimating equations: either
// the truth passed through, or parametric working models fitted to data.

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "podds/errors.hpp"
#include "podds/model.hpp"

namespace podds {

enum class Provenance { oracle, fitted, misspecified };

inline std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::oracle: return "oracle";
    case Provenance::fitted: return "fitted";
    case Provenance::misspecified: return "misspecified";
  }
  return "unknown";
}

struct NuisanceSet {
  OddsFn odds;
  CensoringModel censoring;
  Propensity propensity = Propensity::constant(0.5);
  Provenance provenance = Provenance::oracle;

  /// Checks R(0,z) = 0, R nondecreasing, S_c(0) = 1 and nonincreasing, and
  /// pi in (0,1) on the given profiles over [0, tau].
  void validate(std::span<const CovariateProfile> profiles, double tau) const {
    constexpr int kProbe = 64;
    for (const auto& z : profiles) {
      if (odds.value(0.0, z) != 0.0) throw InvalidModel("nuisance odds violate R(0, z) = 0 at " + z.str());
      const double p = propensity(z);
      if (!(p > 0.0 && p < 1.0)) throw PositivityViolation("nuisance propensity outside (0, 1) at " + z.str());
      for (int a = 0; a <= 1; ++a) {
        if (censoring.survival(0.0, a, z) != 1.0) throw InvalidModel("nuisance censoring violates S_c(0) = 1");
      }
      double previous_r = 0.0;
      double previous_sc[2] = {1.0, 1.0};
      for (int i = 1; i <= kProbe; ++i) {
        const double t = tau * i / kProbe;
        const double R = odds.value(t, z);
        if (!std::isfinite(R) || R < previous_r) throw InvalidModel("nuisance odds are not nondecreasing at " + z.str());
        previous_r = R;
        for (int a = 0; a <= 1; ++a) {
          const double sc = censoring.survival(t, a, z);
          if (sc > previous_sc[a]) throw InvalidModel("nuisance censoring survival increases");
          previous_sc[a] = sc;
        }
      }
    }
  }
};

/// Wraps the true R, r, S_c and pi.
inline NuisanceSet oracle_nuisances(const OddsModel& model, const CensoringModel& censoring,
                                    const TreatmentModel& treatment) {
  return NuisanceSet{model.odds, censoring, treatment.propensity, Provenance::oracle};
}

inline NuisanceSet oracle_nuisances(const Truth& truth) {
  return oracle_nuisances(truth.model, truth.censoring, truth.treatment);
}

// =============================================================================
// Propensity: logistic regression of A on (1, Z)
// =============================================================================

struct PropensityFit {
  Propensity propensity = Propensity::constant(0.5);
  std::vector<double> coefficients;
  int iterations = 0;
  double gradient_norm = 0.0;
};

/// Newton-Raphson fit of logit P(A = 1 | z) = theta_0 + theta' z. Covariate
/// columns that are constant in the data carry no information about the slope
/// and are held at zero.
inline PropensityFit fit_propensity(std::span<const Observation> data) {
  std::size_t treated = 0;
  for (const auto& obs : data) treated += static_cast<std::size_t>(obs.a == 1);
  if (data.empty() || treated == 0 || treated == data.size()) {
    throw PositivityViolation("propensity fit needs both treatment arms; treated " + std::to_string(treated) +
                              " of " + std::to_string(data.size()));
  }
  const std::size_t k = data.front().z.size();
  std::vector<std::size_t> active;  // design columns in use; 0 is the intercept
  active.push_back(0);
  for (std::size_t j = 0; j < k; ++j) {
    const double first = data.front().z[j];
    for (const auto& obs : data) {
      if (obs.z[j] != first) {
        active.push_back(j + 1);
        break;
      }
    }
  }
  const auto p = static_cast<Eigen::Index>(active.size());
  const auto n = static_cast<Eigen::Index>(data.size());
  Eigen::MatrixXd X(n, p);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& obs = data[static_cast<std::size_t>(i)];
    for (Eigen::Index c = 0; c < p; ++c) {
      const std::size_t col = active[static_cast<std::size_t>(c)];
      X(i, c) = col == 0 ? 1.0 : obs.z[col - 1];
    }
    y(i) = obs.a;
  }

  constexpr int kMaxIter = 100;
  constexpr double kTolerance = 1e-8;
  constexpr double kSeparation = 25.0;
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(p);
  PropensityFit fit;
  for (int iter = 1; iter <= kMaxIter; ++iter) {
    const Eigen::VectorXd eta = X * theta;
    const Eigen::VectorXd mu = (1.0 + (-eta.array()).exp()).inverse().matrix();
    const Eigen::VectorXd gradient = X.transpose() * (y - mu);
    const Eigen::VectorXd weight = (mu.array() * (1.0 - mu.array())).matrix();
    const Eigen::MatrixXd info = X.transpose() * weight.asDiagonal() * X;
    fit.gradient_norm = gradient.norm();
    fit.iterations = iter - 1;
    if (fit.gradient_norm < kTolerance) break;
    theta += info.ldlt().solve(gradient);
    if (!theta.allFinite() || theta.cwiseAbs().maxCoeff() > kSeparation) {
      std::ostringstream os;
      os << "propensity fit diverged after " << iter << " Newton steps (separation); |theta| = "
         << theta.cwiseAbs().maxCoeff();
      throw FitFailure(os.str());
    }
    if (iter == kMaxIter) {
      throw FitFailure("propensity fit did not converge in 100 iterations; gradient norm " +
                       std::to_string(fit.gradient_norm));
    }
  }
  fit.coefficients.assign(k + 1, 0.0);
  for (Eigen::Index c = 0; c < p; ++c) fit.coefficients[active[static_cast<std::size_t>(c)]] = theta(c);
  fit.propensity = Propensity::logistic(fit.coefficients);
  return fit;
}

// =============================================================================
// Odds: log-logistic working model by maximum likelihood
// =============================================================================

struct OddsFitOptions {
  /// Hold kappa at this value instead of estimating it.
  std::optional<double> fixed_kappa;
  int max_iterations = 500;
  double gradient_tolerance = 1e-9;
};

struct OddsFit {
  LogLogisticOdds odds;
  double beta_pre = 0.0;  // diagnostic only
  double log_likelihood = 0.0;
  int iterations = 0;
  double gradient_norm = 0.0;
  double gradient_check = 0.0;  // max |analytic - finite difference| at the start point
};

namespace detail {

/// Mean failure-time log-likelihood of the log-logistic proportional odds model
/// and its gradient in theta = (beta, log alpha, [log kappa], gamma).
class LogLogisticObjective {
 public:
  LogLogisticObjective(std::span<const Observation> data, std::optional<double> fixed_kappa)
      : data_(data), fixed_kappa_(fixed_kappa), dim_z_(data.front().z.size()) {}

  Eigen::Index size() const { return static_cast<Eigen::Index>(2 + (fixed_kappa_ ? 0 : 1) + dim_z_); }

  double kappa(const Eigen::VectorXd& theta) const { return fixed_kappa_ ? *fixed_kappa_ : std::exp(theta(2)); }
  Eigen::Index gamma_offset() const { return fixed_kappa_ ? 2 : 3; }

  LogLogisticOdds odds(const Eigen::VectorXd& theta) const {
    LogLogisticOdds f;
    f.alpha = std::exp(theta(1));
    f.kappa = kappa(theta);
    f.gamma.resize(dim_z_);
    for (std::size_t j = 0; j < dim_z_; ++j) f.gamma[j] = theta(gamma_offset() + static_cast<Eigen::Index>(j));
    return f;
  }

  double value(const Eigen::VectorXd& theta, Eigen::VectorXd* gradient) const {
    const double beta = theta(0);
    const double log_alpha = theta(1);
    const double kap = kappa(theta);
    const double log_kappa = std::log(kap);
    if (gradient) gradient->setZero(size());
    double total = 0.0;
    for (const auto& obs : data_) {
      double lp = 0.0;
      for (std::size_t j = 0; j < dim_z_; ++j) lp += theta(gamma_offset() + static_cast<Eigen::Index>(j)) * obs.z[j];
      const double lx = std::log(obs.x) - log_alpha;  // log(X / alpha)
      const double log_r_odds = kap * lx + lp;        // log R(X, Z)
      const double e = std::exp(beta * obs.a);
      const double R = std::exp(log_r_odds);
      const double u = e + R;
      const double d = obs.delta;
      total += d * (log_kappa - log_alpha + (kap - 1.0) * lx + lp) - (1.0 + d) * std::log(u) + beta * obs.a;
      if (gradient) {
        const double share = R / u;  // dlog(u)/dlog R
        auto& g = *gradient;
        g(0) += obs.a * (1.0 - (1.0 + d) * e / u);
        g(1) += -d * kap + (1.0 + d) * kap * share;
        if (!fixed_kappa_) g(2) += d * (1.0 + kap * lx) - (1.0 + d) * share * kap * lx;
        for (std::size_t j = 0; j < dim_z_; ++j) {
          g(gamma_offset() + static_cast<Eigen::Index>(j)) += (d - (1.0 + d) * share) * obs.z[j];
        }
      }
    }
    const double n = static_cast<double>(data_.size());
    if (gradient) *gradient /= n;
    return total / n;
  }

 private:
  std::span<const Observation> data_;
  std::optional<double> fixed_kappa_;
  std::size_t dim_z_;
};

}  // namespace detail

/// Maximizes the failure-time factor of the likelihood over
/// (beta, alpha, kappa, gamma) by BFGS on (beta, log alpha, log kappa, gamma).
inline OddsFit fit_odds_parametric(std::span<const Observation> data, const OddsFitOptions& options = {}) {
  if (options.fixed_kappa && !(*options.fixed_kappa > 0.0)) {
    throw std::domain_error("log-logistic kappa must be positive");
  }
  std::size_t events = 0;
  for (const auto& obs : data) {
    if (obs.delta == 1 && !(obs.x > 0.0)) throw FitFailure("event at nonpositive time");
    events += static_cast<std::size_t>(obs.delta == 1);
  }
  if (events == 0) throw FitFailure("odds fit needs at least one event");

  detail::LogLogisticObjective objective(data, options.fixed_kappa);
  const Eigen::Index p = objective.size();

  std::vector<double> times;
  for (const auto& obs : data) times.push_back(obs.x);
  std::nth_element(times.begin(), times.begin() + static_cast<std::ptrdiff_t>(times.size() / 2), times.end());
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(p);
  theta(1) = std::log(std::max(times[times.size() / 2], 1e-8));

  OddsFit fit;
  Eigen::VectorXd gradient(p);
  double value = objective.value(theta, &gradient);
  {
    Eigen::VectorXd probe = theta;
    for (Eigen::Index j = 0; j < p; ++j) {
      constexpr double h = 1e-6;
      probe(j) = theta(j) + h;
      const double up = objective.value(probe, nullptr);
      probe(j) = theta(j) - h;
      const double down = objective.value(probe, nullptr);
      probe(j) = theta(j);
      fit.gradient_check = std::max(fit.gradient_check, std::abs((up - down) / (2.0 * h) - gradient(j)));
    }
    if (fit.gradient_check > 1e-5) {
      throw FitFailure("odds fit gradient disagrees with finite differences by " + std::to_string(fit.gradient_check));
    }
  }

  // BFGS on the negated objective with Armijo backtracking.
  Eigen::MatrixXd inv_hessian = Eigen::MatrixXd::Identity(p, p);
  int iter = 0;
  for (; iter < options.max_iterations; ++iter) {
    if (gradient.cwiseAbs().maxCoeff() < options.gradient_tolerance) break;
    Eigen::VectorXd direction = inv_hessian * gradient;  // ascent direction
    double slope = gradient.dot(direction);
    if (!(slope > 0.0)) {
      inv_hessian.setIdentity();
      direction = gradient;
      slope = gradient.squaredNorm();
    }
    double step = 1.0;
    Eigen::VectorXd candidate(p);
    Eigen::VectorXd candidate_gradient(p);
    double candidate_value = -kInfinity;
    for (int halving = 0; halving < 60; ++halving, step *= 0.5) {
      candidate = theta + step * direction;
      candidate_value = objective.value(candidate, &candidate_gradient);
      if (std::isfinite(candidate_value) && candidate_value >= value + 1e-4 * step * slope) break;
    }
    if (!(candidate_value >= value)) break;  // no ascent possible at machine precision
    const Eigen::VectorXd s = candidate - theta;
    const Eigen::VectorXd y = gradient - candidate_gradient;  // gradient of the negated objective
    const double sy = s.dot(y);
    if (sy > 1e-14) {
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(p, p);
      inv_hessian = (I - rho * s * y.transpose()) * inv_hessian * (I - rho * y * s.transpose()) + rho * s * s.transpose();
    }
    theta = candidate;
    gradient = candidate_gradient;
    value = candidate_value;
  }
  fit.gradient_norm = gradient.cwiseAbs().maxCoeff();
  fit.iterations = iter;
  if (!theta.allFinite() || fit.gradient_norm > 1e-6) {
    throw FitFailure("odds fit did not converge after " + std::to_string(iter) +
                     " iterations; gradient " + std::to_string(fit.gradient_norm));
  }
  fit.odds = objective.odds(theta);
  if (!(fit.odds.kappa > 0.0)) throw std::domain_error("fitted kappa is not positive");
  fit.beta_pre = theta(0);
  fit.log_likelihood = value * static_cast<double>(data.size());
  return fit;
}

// =============================================================================
// Censoring: exponential per arm
// =============================================================================

struct CensoringFit {
  CensoringModel censoring;
  std::array<std::size_t, 2> events{0, 0};
  std::array<double, 2> exposure{0.0, 0.0};
};

/// rate(a) = #randomly censored(a) / total follow-up(a). Subjects stopped at
/// the administrative horizon tau are not censoring events.
inline CensoringFit fit_censoring(std::span<const Observation> data, double tau = kInfinity) {
  if (data.empty()) throw std::invalid_argument("censoring fit needs at least one observation");
  CensoringFit fit;
  for (const auto& obs : data) {
    const auto arm = static_cast<std::size_t>(obs.a != 0);
    fit.exposure[arm] += obs.x;
    if (obs.delta == 0 && obs.x < tau * (1.0 - 1e-12)) ++fit.events[arm];
  }
  double rate[2];
  for (std::size_t a = 0; a < 2; ++a) {
    rate[a] = fit.exposure[a] > 0.0 ? static_cast<double>(fit.events[a]) / fit.exposure[a] : 0.0;
  }
  fit.censoring = CensoringModel::exponential(rate[0], rate[1]);
  return fit;
}

// =============================================================================
// Assembled working models
// =============================================================================

/// Deliberate misspecification toggles: constant 0.5 propensity, kappa = 1.
struct Misspecification {
  bool propensity = false;
  bool odds = false;
  bool any() const noexcept { return propensity || odds; }
};

struct FittedNuisances {
  NuisanceSet set;
  std::optional<PropensityFit> propensity;
  OddsFit odds;
  CensoringFit censoring;
};

inline FittedNuisances fit_nuisances(std::span<const Observation> data, double tau,
                                     const Misspecification& wrong = {}) {
  FittedNuisances out;
  OddsFitOptions odds_options;
  if (wrong.odds) odds_options.fixed_kappa = 1.0;
  out.odds = fit_odds_parametric(data, odds_options);
  out.censoring = fit_censoring(data, tau);
  Propensity propensity = Propensity::constant(0.5);
  if (!wrong.propensity) {
    out.propensity = fit_propensity(data);
    propensity = out.propensity->propensity;
  }
  out.set = NuisanceSet{out.odds.odds, out.censoring.censoring, propensity,
                        wrong.any() ? Provenance::misspecified : Provenance::fitted};
  return out;
}

/// Fit report: parameter estimates, iteration counts, convergence flags.
inline nlohmann::json to_json(const FittedNuisances& fit) {
  nlohmann::json j;
  j["provenance"] = to_string(fit.set.provenance);
  j["odds"] = {{"family", "log-logistic"},
               {"alpha", fit.odds.odds.alpha},
               {"kappa", fit.odds.odds.kappa},
               {"gamma", fit.odds.odds.gamma},
               {"beta_pre", fit.odds.beta_pre},
               {"log_likelihood", fit.odds.log_likelihood},
               {"iterations", fit.odds.iterations},
               {"gradient_norm", fit.odds.gradient_norm},
               {"gradient_check", fit.odds.gradient_check},
               {"converged", true}};
  j["censoring"] = {{"family", "exponential"},
                    {"rate", {fit.censoring.censoring.rate(0), fit.censoring.censoring.rate(1)}},
                    {"events", fit.censoring.events},
                    {"exposure", fit.censoring.exposure}};
  if (fit.propensity) {
    j["propensity"] = {{"family", "logistic"},
                       {"coefficients", fit.propensity->coefficients},
                       {"iterations", fit.propensity->iterations},
                       {"gradient_norm", fit.propensity->gradient_norm},
                       {"converged", true}};
  } else {
    j["propensity"] = {{"family", "constant"}, {"value", 0.5}, {"converged", true}};
  }
  return j;
}

}  // namespace podds
