#pragma once

// Estimating equations for beta: the naive likelihood score with R held
// fixed, and the efficient score
//
//     U = delta V(X) e/(e + R(X)) - int_0^X V(t) r(t) e/(e + R(t))^2 dt,
//     V(t) = -A - dh0(t) (e + R(t)) / (e r(t)) + h0(t) / e,     e = e^{beta A},
//
// with h0 re-solved at every trial beta. dh0/r is dh0/dR, and the compensator
// is integrated in R by the trapezoid rule on the solver grid.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/tools/toms748_solve.hpp>
#include <nlohmann/json.hpp>

#include "podds/errors.hpp"
#include "podds/ide.hpp"
#include "podds/model.hpp"
#include "podds/nuisance.hpp"

namespace podds {

enum class EstimatorKind { naive, efficient };

inline std::string to_string(EstimatorKind kind) { return kind == EstimatorKind::naive ? "naive" : "efficient"; }

inline EstimatorKind estimator_kind_from_string(const std::string& s) {
  if (s == "naive") return EstimatorKind::naive;
  if (s == "efficient") return EstimatorKind::efficient;
  throw ConfigError("unknown estimator kind '" + s + "'");
}

namespace detail {

inline void check_positive_density(double r, double t, const CovariateProfile& z) {
  if (!(r >= 1e-12)) {
    std::ostringstream os;
    os << "odds density r(" << t << "," << z.str() << ") = " << r << " below 1e-12";
    throw Singularity(os.str());
  }
}

/// V e / (e + R)^2 at grid point j: the compensator integrand per unit R.
inline double compensator_integrand(const H0Solution& sol, std::size_t j, int a, double beta, const NuisanceSet& nuis) {
  const double e = std::exp(beta * a);
  const double u = e + nuis.odds.value(sol.grid[j], sol.z);
  return (-a * e - sol.dh0_du[j] * u + sol.h0[j]) / (u * u);
}

/// Trapezoid integral in R of tabulated integrand f over [0, X], given the
/// cumulative sums F at the nodes and the odds clock R at the nodes.
inline double integrate_to_x(const TimeGrid& grid, const std::vector<double>& odds, const std::vector<double>& f,
                             const std::vector<double>& F, double x, double odds_at_x) {
  const auto [cell, offset] = grid.locate(x);
  const double du = odds[cell + 1] - odds[cell];
  const double partial = std::clamp(odds_at_x - odds[cell], 0.0, du);
  const double frac = du > 0.0 ? partial / du : 0.0;
  const double at_x = f[cell] + (f[cell + 1] - f[cell]) * frac;
  return F[cell] + 0.5 * partial * (f[cell] + at_x);
}

}  // namespace detail

/// V(t) for one observation.
inline double efficient_integrand(double t, const Observation& obs, double beta, const NuisanceSet& nuis,
                                  const H0Solution& h0sol) {
  const double e = std::exp(beta * obs.a);
  const double R = nuis.odds.value(t, obs.z);
  detail::check_positive_density(nuis.odds.density(t, obs.z), t, obs.z);
  return -obs.a - h0sol.odds_derivative_at(t) * (e + R) / e + h0sol.value_at(t) / e;
}

/// Efficient score of one observation; the compensator integral is a
/// trapezoid sum in R on the solver grid up to X with the integrand linearly
/// interpolated at X.
inline double efficient_score(const Observation& obs, double beta, const NuisanceSet& nuis, const H0Solution& h0sol) {
  if (!(obs.z == h0sol.z)) throw std::invalid_argument("h0 solution belongs to another covariate profile");
  const auto& grid = h0sol.grid;
  std::vector<double> odds(grid.size()), f(grid.size()), F(grid.size(), 0.0);
  for (std::size_t j = 0; j < grid.size(); ++j) {
    odds[j] = nuis.odds.value(grid[j], obs.z);
    f[j] = detail::compensator_integrand(h0sol, j, obs.a, beta, nuis);
    if (j > 0) F[j] = F[j - 1] + 0.5 * (odds[j] - odds[j - 1]) * (f[j - 1] + f[j]);
  }
  const double R_x = nuis.odds.value(obs.x, obs.z);
  const double integral = detail::integrate_to_x(grid, odds, f, F, obs.x, R_x);
  double jump = 0.0;
  if (obs.delta == 1) {
    const double e = std::exp(beta * obs.a);
    jump = efficient_integrand(obs.x, obs, beta, nuis, h0sol) * e / (e + R_x);
  }
  return jump - integral;
}

/// Distinct covariate profiles in a dataset, in first-seen order.
inline std::vector<CovariateProfile> distinct_profiles(std::span<const Observation> data) {
  std::vector<CovariateProfile> out;
  std::map<CovariateProfile, bool> seen;
  for (const auto& obs : data) {
    if (seen.emplace(obs.z, true).second) out.push_back(obs.z);
  }
  return out;
}

/// Per-observation score at a fixed beta. For the efficient kind, h0 is solved
/// once per covariate profile and the compensator integral is tabulated per
/// arm, so each observation costs O(1).
class ScoreFunction {
 public:
  ScoreFunction(EstimatorKind kind, double beta, const NuisanceSet& nuis, const TimeGrid& grid,
                std::span<const CovariateProfile> profiles, const H0Options& options = {})
      : kind_(kind), beta_(beta), nuis_(&nuis) {
    if (kind_ == EstimatorKind::naive) return;
    for (const auto& z : profiles) {
      Profile p{solve_profile(grid, z, beta, nuis, efficient_target(), options), {}, {}, {}};
      p.odds.resize(grid.size());
      for (std::size_t j = 0; j < grid.size(); ++j) p.odds[j] = nuis.odds.value(grid[j], z);
      for (int a = 0; a <= 1; ++a) {
        auto& f = p.integrand[static_cast<std::size_t>(a)];
        auto& F = p.cumulative[static_cast<std::size_t>(a)];
        f.resize(grid.size());
        F.assign(grid.size(), 0.0);
        for (std::size_t j = 0; j < grid.size(); ++j) f[j] = detail::compensator_integrand(p.solution, j, a, beta, nuis);
        for (std::size_t j = 1; j < grid.size(); ++j) F[j] = F[j - 1] + 0.5 * (p.odds[j] - p.odds[j - 1]) * (f[j - 1] + f[j]);
      }
      index_.emplace(z, profiles_.size());
      profiles_.push_back(std::move(p));
    }
  }

  EstimatorKind kind() const noexcept { return kind_; }
  double beta() const noexcept { return beta_; }

  double operator()(const Observation& obs) const {
    if (kind_ == EstimatorKind::naive) return naive_score(obs, beta_, nuis_->odds);
    const auto it = index_.find(obs.z);
    if (it == index_.end()) throw std::invalid_argument("no h0 solution for covariate profile " + obs.z.str());
    const Profile& p = profiles_[it->second];
    const auto arm = static_cast<std::size_t>(obs.a);
    const double R_x = nuis_->odds.value(obs.x, obs.z);
    const double integral = detail::integrate_to_x(p.solution.grid, p.odds, p.integrand[arm], p.cumulative[arm], obs.x, R_x);
    double jump = 0.0;
    if (obs.delta == 1) {
      const double e = std::exp(beta_ * obs.a);
      jump = efficient_integrand(obs.x, obs, beta_, *nuis_, p.solution) * e / (e + R_x);
    }
    return jump - integral;
  }

  double sum(std::span<const Observation> data) const {
    double total = 0.0;
    for (const auto& obs : data) total += (*this)(obs);
    return total;
  }

  std::vector<H0Solution> solutions() const {
    std::vector<H0Solution> out;
    for (const auto& p : profiles_) out.push_back(p.solution);
    return out;
  }

 private:
  struct Profile {
    H0Solution solution;
    std::vector<double> odds;
    std::array<std::vector<double>, 2> integrand;
    std::array<std::vector<double>, 2> cumulative;
  };

  EstimatorKind kind_;
  double beta_;
  const NuisanceSet* nuis_;
  std::vector<Profile> profiles_;
  std::map<CovariateProfile, std::size_t> index_;
};

// =============================================================================
// Root finding
// =============================================================================

struct RootResult {
  double root = 0.0;
  double value = 0.0;  // f(root)
  double bracket_lo = 0.0;
  double bracket_hi = 0.0;
  int evaluations = 0;
};

/// Root of a scalar function: the bracket [lo, hi] is widened symmetrically
/// (never past +-limit) until the signs differ, then TOMS 748 (bracketing
/// bisection with secant and inverse-cubic steps) runs to |hi - lo| <= tol.
inline RootResult find_root(const std::function<double(double)>& f, double lo, double hi, double limit = 10.0,
                            double tol = 1e-10) {
  if (!(lo < hi)) throw std::invalid_argument("root bracket must satisfy lo < hi");
  RootResult out;
  double f_lo = f(lo);
  double f_hi = f(hi);
  out.evaluations = 2;
  while (std::signbit(f_lo) == std::signbit(f_hi) && f_lo != 0.0 && f_hi != 0.0) {
    if (lo <= -limit && hi >= limit) {
      std::ostringstream os;
      os << "no sign change of the estimating function on [" << lo << ", " << hi << "]: f = " << f_lo << ", " << f_hi;
      throw NoRoot(os.str());
    }
    const double width = hi - lo;
    if (lo > -limit) {
      lo = std::max(-limit, lo - width);
      f_lo = f(lo);
      ++out.evaluations;
    }
    if (hi < limit) {
      hi = std::min(limit, hi + width);
      f_hi = f(hi);
      ++out.evaluations;
    }
  }
  out.bracket_lo = lo;
  out.bracket_hi = hi;
  if (f_lo == 0.0 || f_hi == 0.0) {
    out.root = f_lo == 0.0 ? lo : hi;
    return out;
  }
  std::uintmax_t iterations = 200;
  int counted = 0;
  auto counting = [&](double x) {
    ++counted;
    return f(x);
  };
  auto tolerance = [tol](double a, double b) { return std::abs(b - a) <= tol; };
  const auto [a, b] = boost::math::tools::toms748_solve(counting, lo, hi, f_lo, f_hi, tolerance, iterations);
  out.evaluations += counted;
  if (iterations >= 200) throw NoRoot("root finder did not converge in 200 iterations");
  out.root = 0.5 * (a + b);
  out.value = f(out.root);
  ++out.evaluations;
  return out;
}

// =============================================================================
// Estimation
// =============================================================================

struct SolveOptions {
  double bracket_lo = -1.0;
  double bracket_hi = 1.0;
  double bracket_limit = 10.0;
  double tolerance = 1e-10;
  H0Options h0;
  /// True beta, when known, to report the mean score at the truth.
  std::optional<double> truth;
  bool compute_se = true;
};

struct ScoreReport {
  EstimatorKind kind = EstimatorKind::efficient;
  double beta_hat = 0.0;
  double se_hat = 0.0;
  double bracket_lo = 0.0;
  double bracket_hi = 0.0;
  int iterations = 0;
  double residual = 0.0;  // sum_i U_i(beta_hat)
  std::size_t n = 0;
  std::optional<double> score_mean_at_truth;
};

inline nlohmann::json to_json(const ScoreReport& r) {
  nlohmann::json j{{"kind", to_string(r.kind)},
                   {"beta_hat", r.beta_hat},
                   {"se_hat", r.se_hat},
                   {"bracket", {r.bracket_lo, r.bracket_hi}},
                   {"iterations", r.iterations},
                   {"residual", r.residual},
                   {"n", r.n}};
  j["score_mean_at_truth"] = r.score_mean_at_truth ? nlohmann::json(*r.score_mean_at_truth) : nlohmann::json(nullptr);
  return j;
}

namespace detail {

inline void check_identifiable(std::span<const Observation> data) {
  if (data.empty()) throw NoRoot("empty dataset: the estimating equation has no root");
  std::size_t treated = 0;
  for (const auto& obs : data) treated += static_cast<std::size_t>(obs.a == 1);
  if (treated == 0 || treated == data.size()) {
    throw NonIdentified("beta is not identified: all " + std::to_string(data.size()) + " subjects share one arm");
  }
}

}  // namespace detail

/// Sum of U_i(beta) over the data for the given kind.
inline double score_sum(std::span<const Observation> data, double beta, const NuisanceSet& nuis, const TimeGrid& grid,
                        EstimatorKind kind, const H0Options& options = {}) {
  const auto profiles = distinct_profiles(data);
  return ScoreFunction(kind, beta, nuis, grid, profiles, options).sum(data);
}

/// se = sqrt(C / (B^2 n)) with B = n^-1 sum dU_i/dbeta by central differences
/// (h0 re-solved at each side) and C = n^-1 sum U_i^2.
inline double sandwich_se(std::span<const Observation> data, double beta_hat, const NuisanceSet& nuis,
                          const TimeGrid& grid, EstimatorKind kind, const H0Options& options = {}) {
  const auto profiles = distinct_profiles(data);
  const double n = static_cast<double>(data.size());
  const double step = 1e-5 * (1.0 + std::abs(beta_hat));
  const ScoreFunction at(kind, beta_hat, nuis, grid, profiles, options);
  const ScoreFunction up(kind, beta_hat + step, nuis, grid, profiles, options);
  const ScoreFunction down(kind, beta_hat - step, nuis, grid, profiles, options);
  double slope = 0.0;
  double meat = 0.0;
  for (const auto& obs : data) {
    slope += (up(obs) - down(obs)) / (2.0 * step);
    const double u = at(obs);
    meat += u * u;
  }
  slope /= n;
  meat /= n;
  if (!(std::abs(slope) >= 1e-10)) {
    std::ostringstream os;
    os << "estimating function is flat at beta = " << beta_hat << " (mean slope " << slope << ")";
    throw FlatScore(os.str());
  }
  return std::sqrt(meat / (slope * slope * n));
}

/// Solves sum_i U_i(beta) = 0.
inline ScoreReport solve_beta(std::span<const Observation> data, const NuisanceSet& nuis, const TimeGrid& grid,
                              EstimatorKind kind, const SolveOptions& options = {}) {
  detail::check_identifiable(data);
  const auto profiles = distinct_profiles(data);
  // Trial points far from the root may sit where h0 is steep and the grid
  // coarse; the residual tolerance is enforced at beta_hat only.
  H0Options trial = options.h0;
  trial.tolerance = kInfinity;
  auto total = [&](double beta) { return ScoreFunction(kind, beta, nuis, grid, profiles, trial).sum(data); };
  const auto root = find_root(total, options.bracket_lo, options.bracket_hi, options.bracket_limit, options.tolerance);

  ScoreReport report;
  report.kind = kind;
  report.n = data.size();
  report.beta_hat = root.root;
  report.bracket_lo = root.bracket_lo;
  report.bracket_hi = root.bracket_hi;
  report.iterations = root.evaluations;
  report.residual = root.value;
  if (!(std::abs(root.value) < 1e-8 * static_cast<double>(data.size()))) {
    std::ostringstream os;
    os << "estimating equation residual " << root.value << " at beta = " << root.root << " exceeds 1e-8 n";
    throw NoRoot(os.str());
  }
  if (kind == EstimatorKind::efficient) ScoreFunction(kind, report.beta_hat, nuis, grid, profiles, options.h0);
  if (options.compute_se) report.se_hat = sandwich_se(data, report.beta_hat, nuis, grid, kind, options.h0);
  if (options.truth) report.score_mean_at_truth = total(*options.truth) / static_cast<double>(data.size());
  return report;
}

}  // namespace podds
