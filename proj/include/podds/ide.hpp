#pragma once

// Projection of int h(t,A,Z) S(t|A,Z) dM(t) onto the odds tangent space.
//
// The projection is indexed by a function h0(t, z) that solves, per covariate
// profile, the linear Volterra integro-differential equation
//
//     dh0/dt = m h0 + q - v [ int_0^t (w dh0/du - k h0) du + c ],   h0(0) = 0,
//
// where m, q, v, w, k are conditional expectations over A given Z built from
// (R, r, S_c, pi) and the target h. Every coefficient except w carries one
// factor r(t, z), so the equation is solved on the odds clock u = R(t, z),
// where r dt = du and the coefficients stay finite even where r is 0 or
// unbounded (a fitted log-logistic R with kappa != 1 at t = 0). The grid
// nodes are the time grid's; only the step sizes change. Perturbations of R must vanish at t = 0
// but are free at the horizon tau, which pins the constant c through the
// terminal condition
//
//     E[ {h S - dh0/dR + h0/(e^{beta A} + R)} S S_c / (e^{beta A} + R) | Z ](tau) = 0.
//
// BoundaryMode::literal drops c (and the terminal condition); the resulting
// h0 satisfies the orthogonality condition only for perturbations that also
// vanish at tau.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "podds/errors.hpp"
#include "podds/model.hpp"
#include "podds/nuisance.hpp"

namespace podds {

/// Uniform grid 0 = t_0 < ... < t_M = horizon.
class TimeGrid {
 public:
  TimeGrid(double horizon, std::size_t intervals) : horizon_(horizon), intervals_(intervals) {
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw std::invalid_argument("grid horizon must be positive and finite");
    if (intervals < 2) throw std::invalid_argument("grid needs at least 2 intervals");
    step_ = horizon / static_cast<double>(intervals);
  }

  double horizon() const noexcept { return horizon_; }
  std::size_t intervals() const noexcept { return intervals_; }
  std::size_t size() const noexcept { return intervals_ + 1; }
  double step() const noexcept { return step_; }
  double operator[](std::size_t j) const noexcept {
    return j == intervals_ ? horizon_ : static_cast<double>(j) * step_;
  }

  /// Cell index k and offset t - t_k with t in [t_k, t_{k+1}].
  std::pair<std::size_t, double> locate(double t) const {
    if (!(t >= 0.0) || t > horizon_ * (1.0 + 1e-12)) {
      std::ostringstream os;
      os << "time " << t << " outside solver grid [0, " << horizon_ << "]";
      throw HorizonError(os.str());
    }
    auto k = static_cast<std::size_t>(t / step_);
    k = std::min(k, intervals_ - 1);
    return {k, std::max(0.0, t - (*this)[k])};
  }

  /// Linear interpolation of grid values at t.
  double interpolate(const std::vector<double>& values, double t) const {
    const auto [k, offset] = locate(t);
    const double frac = offset / step_;
    return values[k] + frac * (values[k + 1] - values[k]);
  }

 private:
  double horizon_;
  std::size_t intervals_;
  double step_ = 0.0;
};

/// E[g(A) | Z = z] = pi(z) g(1) + (1 - pi(z)) g(0).
template <class G>
double expect_given_z(G&& g, double propensity) {
  if (!(propensity >= 0.0 && propensity <= 1.0)) throw std::domain_error("propensity must lie in [0, 1]");
  return propensity * g(1) + (1.0 - propensity) * g(0);
}

/// Target h(t, a, z) of the projection.
using TargetFn = std::function<double(double t, int a, const CovariateProfile& z)>;

/// h(t, a, z) = -a: projecting the beta-score gives the efficient score.
inline TargetFn efficient_target() {
  return [](double, int a, const CovariateProfile&) { return -static_cast<double>(a); };
}

inline TargetFn zero_target() {
  return [](double, int, const CovariateProfile&) { return 0.0; };
}

/// Coefficients of the integro-differential equation on a grid, for one z,
/// per unit of the odds clock u = R(t, z). The time-clock coefficients are
/// r m, r q, r v, w and r k.
struct CoefficientTable {
  CovariateProfile z;
  double beta = 0.0;
  std::vector<double> m, q, v, w, k;
  /// First (non-integral) term of q; the terminal condition needs it alone.
  std::vector<double> q_local;
  /// Odds clock R(t_j, z) and density r(t_j, z) at the nodes.
  std::vector<double> u, r;

  std::size_t size() const noexcept { return m.size(); }
};

/// Evaluates m, q, v, w, k at every grid point with E[. | Z] as a two-term
/// sum over A and the integral inside q by the trapezoid rule in u. With
/// e = e^{beta A} and D = E[S_c e (e + R)^-2 | Z]:
///
///     m = E[S_c e (e+R)^-3] / D
///     q = E[h S_c e^2 (e+R)^-3] / D + int_0^u E[h S_c e^2 (e+R)^-4] du' / D
///     v = 1 / D,   w = E[S_c e (e+R)^-3],   k = E[S_c e (e+R)^-4]
///
/// r may be 0 or infinite at t = 0 only; elsewhere r below 1e-12 is a
/// coefficient singularity.
inline CoefficientTable coefficients(const TimeGrid& grid, const CovariateProfile& z, double beta,
                                     const NuisanceSet& nuis, const TargetFn& target) {
  const std::size_t n = grid.size();
  CoefficientTable table;
  table.z = z;
  table.beta = beta;
  for (auto* column : {&table.m, &table.q, &table.v, &table.w, &table.k, &table.q_local, &table.u, &table.r}) {
    column->resize(n);
  }

  const double pi = nuis.propensity(z);
  const double e1 = std::exp(beta);
  auto singular = [&](double t, const std::string& what) {
    std::ostringstream os;
    os << "coefficient singularity at t = " << t << ", z = " << z.str() << ": " << what;
    return CoefficientSingularity(os.str());
  };

  std::vector<double> memory_integrand(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double t = grid[j];
    const double R = nuis.odds.value(t, z);
    const double r = nuis.odds.density(t, z);
    if (!std::isfinite(R) || R < 0.0) throw singular(t, "R is not finite");
    if (j > 0 && R < table.u[j - 1]) throw singular(t, "R decreases");
    if (std::isnan(r) || r < 0.0 || (j > 0 && !std::isfinite(r))) throw singular(t, "r is not finite");
    if (j > 0 && r < 1e-12) throw singular(t, "r below 1e-12");
    const double sc[2] = {nuis.censoring.survival(t, 0, z), nuis.censoring.survival(t, 1, z)};
    auto moment = [&](int power, bool with_target, double e_power) {
      return expect_given_z(
          [&](int a) {
            const double e = a ? e1 : 1.0;
            const double h = with_target ? target(t, a, z) : 1.0;
            return h * sc[a] * std::pow(e, e_power) * std::pow(e + R, -power);
          },
          pi);
    };
    const double D = moment(2, false, 1.0);
    if (!(D > 0.0) || !std::isfinite(D)) throw singular(t, "E[S_c e (e+R)^-2 | Z] is not positive");
    const double W = moment(3, false, 1.0);
    memory_integrand[j] = moment(4, true, 2.0);

    table.u[j] = R;
    table.r[j] = r;
    table.m[j] = W / D;
    table.q_local[j] = moment(3, true, 2.0) / D;
    table.v[j] = 1.0 / D;
    table.w[j] = W;
    table.k[j] = moment(4, false, 1.0);
  }
  double memory = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (j > 0) memory += 0.5 * (table.u[j] - table.u[j - 1]) * (memory_integrand[j - 1] + memory_integrand[j]);
    table.q[j] = table.q_local[j] + table.v[j] * memory;
  }
  for (std::size_t j = 0; j < n; ++j) {
    for (double x : {table.m[j], table.q[j], table.v[j], table.w[j], table.k[j]}) {
      if (!std::isfinite(x)) throw singular(grid[j], "non-finite coefficient");
    }
  }
  return table;
}

enum class BoundaryMode {
  free_end,  // h0(0) = 0, perturbations free at tau (the orthogonal projection)
  literal,   // h0(0) = 0 and c = 0
};

inline std::string to_string(BoundaryMode mode) { return mode == BoundaryMode::free_end ? "free-end" : "literal"; }

struct H0Options {
  BoundaryMode boundary = BoundaryMode::free_end;
  /// Maximum admissible IDE and projection-condition residual at M = 2000.
  double tolerance = 1e-4;
  /// Scale the tolerance by (2000 / M)^2 on coarser grids; residuals are O(step^2).
  bool scale_with_grid = true;

  double effective_tolerance(const TimeGrid& grid) const {
    constexpr double kReferenceIntervals = 2000.0;
    const double ratio = kReferenceIntervals / static_cast<double>(grid.intervals());
    return scale_with_grid && ratio > 1.0 ? tolerance * ratio * ratio : tolerance;
  }
};

struct H0Solution {
  TimeGrid grid{1.0, 2};
  CovariateProfile z;
  double beta = 0.0;
  BoundaryMode boundary = BoundaryMode::free_end;
  std::vector<double> h0;
  /// dh0/dt = r dh0/dR; infinite at t = 0 when r is.
  std::vector<double> dh0;
  /// dh0/dR, finite everywhere.
  std::vector<double> dh0_du;
  /// IDE residual per cell in integrated form, in time units.
  std::vector<double> residuals;
  /// The constant c fixed by the terminal condition (0 in literal mode).
  double boundary_shift = 0.0;
  double residual = 0.0;
  double projection_residual = std::numeric_limits<double>::quiet_NaN();

  double value_at(double t) const { return grid.interpolate(h0, t); }
  double derivative_at(double t) const { return grid.interpolate(dh0, t); }
  double odds_derivative_at(double t) const { return grid.interpolate(dh0_du, t); }
};

namespace detail {

struct Trajectory {
  std::vector<double> h, dh;  // dh = dh/du
};

/// Product-integration predictor-corrector on the odds clock for
///   dh/du = m h + f - v int_0^u (w dh - k h) du',   h(0) = 0.
/// Each step trapezoids the memory integral over the computed history,
/// predicts h by explicit Euler, corrects once with the trapezoid rule and
/// re-evaluates dh at the corrected value. The only implicit piece is the
/// newest trapezoid panel of the memory integral, which is linear in dh and
/// solved for exactly. Steps are du_j = u_{j+1} - u_j and may be zero.
inline Trajectory integrate_ide(const CoefficientTable& c, const std::vector<double>& forcing) {
  const std::size_t n = c.size();
  Trajectory out{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
  auto& h = out.h;
  auto& dh = out.dh;
  dh[0] = forcing[0];
  double memory = 0.0;  // int_0^{u_j} (w dh - k h)
  for (std::size_t j = 0; j + 1 < n; ++j) {
    const std::size_t i = j + 1;
    const double du = c.u[i] - c.u[j];
    const double panel_left = c.w[j] * dh[j] - c.k[j] * h[j];
    auto slope = [&](double h_next) {
      const double numerator = c.m[i] * h_next + forcing[i] - c.v[i] * (memory + 0.5 * du * (panel_left - c.k[i] * h_next));
      return numerator / (1.0 + 0.5 * du * c.v[i] * c.w[i]);
    };
    const double predicted = h[j] + du * dh[j];
    const double predicted_slope = slope(predicted);
    h[i] = h[j] + 0.5 * du * (dh[j] + predicted_slope);
    dh[i] = slope(h[i]);
    memory += 0.5 * du * (panel_left + c.w[i] * dh[i] - c.k[i] * h[i]);
  }
  return out;
}

/// IDE residual in integrated form on each cell [t_{j-1}, t_j]:
///
///     {h_j - h_{j-1} - du (F_{j-1} + F_j) / 2} / dt,   F = m h + q - v (mem + shift),
///
/// with mem = int_0^u (w dh - k h) built from increments of h, so no pointwise
/// derivative of h enters. Dividing by dt reports it per unit time, which is
/// the time-clock residual wherever r is constant on the cell. Entry 0 holds h(0).
inline std::vector<double> ide_residuals(const TimeGrid& grid, const CoefficientTable& c, const std::vector<double>& h,
                                         double shift) {
  const std::size_t n = grid.size();
  const double dt = grid.step();
  std::vector<double> residual(n);
  residual[0] = h[0];
  double memory = 0.0;
  double previous = c.m[0] * h[0] + c.q[0] - c.v[0] * shift;
  for (std::size_t j = 1; j < n; ++j) {
    const double du = c.u[j] - c.u[j - 1];
    const double increment = h[j] - h[j - 1];
    memory += 0.5 * (c.w[j - 1] + c.w[j]) * increment - 0.5 * du * (c.k[j - 1] * h[j - 1] + c.k[j] * h[j]);
    const double current = c.m[j] * h[j] + c.q[j] - c.v[j] * (memory + shift);
    residual[j] = (increment - 0.5 * du * (previous + current)) / dt;
    previous = current;
  }
  return residual;
}

inline double max_abs(const std::vector<double>& values) {
  double out = 0.0;
  for (double x : values) out = std::max(out, std::abs(x));
  return out;
}

}  // namespace detail

/// Solves for h0(., z) on the grid. Throws SolverFailure when the residual
/// exceeds the tolerance.
inline H0Solution solve_h0(const TimeGrid& grid, const CoefficientTable& coeffs, const H0Options& options = {}) {
  if (coeffs.size() != grid.size() || coeffs.u.size() != grid.size()) {
    throw std::invalid_argument("coefficient table does not match grid");
  }
  const std::size_t last = grid.size() - 1;

  H0Solution sol{grid, coeffs.z, coeffs.beta, options.boundary, {}, {}, {}, {}, 0.0, 0.0};
  auto particular = detail::integrate_ide(coeffs, coeffs.q);
  if (options.boundary == BoundaryMode::free_end) {
    // Superpose the response to a unit constant inside the memory term and
    // choose its weight so that q_local + m h0 - dh0/du = 0 at tau.
    std::vector<double> unit(grid.size());
    for (std::size_t j = 0; j < unit.size(); ++j) unit[j] = -coeffs.v[j];
    const auto response = detail::integrate_ide(coeffs, unit);
    const double gap = coeffs.q_local[last] + coeffs.m[last] * particular.h[last] - particular.dh[last];
    const double sensitivity = coeffs.m[last] * response.h[last] - response.dh[last];
    if (!(std::abs(sensitivity) > 1e-300) || !std::isfinite(gap / sensitivity)) {
      throw SolverFailure("terminal condition is singular for z = " + coeffs.z.str());
    }
    sol.boundary_shift = -gap / sensitivity;
    for (std::size_t j = 0; j < grid.size(); ++j) {
      particular.h[j] += sol.boundary_shift * response.h[j];
      particular.dh[j] += sol.boundary_shift * response.dh[j];
    }
  }
  sol.h0 = std::move(particular.h);
  sol.dh0_du = std::move(particular.dh);
  sol.dh0.resize(grid.size());
  for (std::size_t j = 0; j < grid.size(); ++j) sol.dh0[j] = sol.dh0_du[j] == 0.0 ? 0.0 : coeffs.r[j] * sol.dh0_du[j];
  sol.residuals = detail::ide_residuals(grid, coeffs, sol.h0, sol.boundary_shift);
  sol.residual = detail::max_abs(sol.residuals);
  const double tolerance = options.effective_tolerance(grid);
  if (!(sol.residual <= tolerance)) {
    std::ostringstream os;
    const auto worst = std::max_element(sol.residuals.begin(), sol.residuals.end(),
                                        [](double a, double b) { return std::abs(a) < std::abs(b); });
    const auto at = static_cast<std::size_t>(worst - sol.residuals.begin());
    os << "IDE residual " << sol.residual << " exceeds " << tolerance << " for z = " << coeffs.z.str()
       << " (worst at t = " << grid[at] << ", M = " << grid.intervals() << ")";
    throw SolverFailure(os.str());
  }
  return sol;
}

/// max_t |E{H(t, A, Z) | Z = z}| where H is assembled term by term from
/// h, h0 and the model's survival, with the at-risk indicator Y(t) replaced
/// by S(t|A,Z) S_c(t|A,Z) inside the expectation:
///
///     H(t) = B(t) e S / (e+R)^2 + int_0^t B e r S / (e+R)^3 du - [free end] int_0^tau (same) du,
///     B(t) = h(t,A,Z) - dh0(t)/(e lambda(t|A,Z)) + h0(t)/e.
///
/// dh0/(e lambda) is evaluated as (e+R) (dh0/dR) / e and the integral is taken
/// in R, so the check stays finite where r is 0 or unbounded. Shares no code
/// with the coefficient table or the solver.
inline double projection_condition_residual(const TimeGrid& grid, const CovariateProfile& z, double beta,
                                            const NuisanceSet& nuis, const H0Solution& sol, const TargetFn& target,
                                            BoundaryMode boundary = BoundaryMode::free_end) {
  if (sol.h0.size() != grid.size() || sol.dh0_du.size() != grid.size()) {
    throw std::invalid_argument("h0 solution does not match grid");
  }
  const OddsModel model{beta, nuis.odds, kInfinity};
  const double pi = nuis.propensity(z);
  const std::size_t n = grid.size();
  std::vector<double> local(n), integrand(n), odds(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double t = grid[j];
    const double R = nuis.odds.value(t, z);
    odds[j] = R;
    auto bracket = [&](int a) {
      const double e = std::exp(beta * a);
      return target(t, a, z) - (e + R) * sol.dh0_du[j] / e + sol.h0[j] / e;
    };
    auto at_risk = [&](int a) { return survival(t, a, z, model) * nuis.censoring.survival(t, a, z); };
    local[j] = expect_given_z(
        [&](int a) {
          const double e = std::exp(beta * a);
          return bracket(a) * e * at_risk(a) / ((e + R) * (e + R));
        },
        pi);
    integrand[j] = expect_given_z(
        [&](int a) {
          const double e = std::exp(beta * a);
          return bracket(a) * e * at_risk(a) / ((e + R) * (e + R) * (e + R));
        },
        pi);
  }
  std::vector<double> cumulative(n, 0.0);
  for (std::size_t j = 1; j < n; ++j) {
    cumulative[j] = cumulative[j - 1] + 0.5 * (odds[j] - odds[j - 1]) * (integrand[j - 1] + integrand[j]);
  }
  const double total = boundary == BoundaryMode::free_end ? cumulative[n - 1] : 0.0;
  double worst = 0.0;
  for (std::size_t j = 0; j < n; ++j) worst = std::max(worst, std::abs(local[j] + cumulative[j] - total));
  return worst;
}

/// Coefficients, solve and projection check for one profile.
inline H0Solution solve_profile(const TimeGrid& grid, const CovariateProfile& z, double beta, const NuisanceSet& nuis,
                                const TargetFn& target, const H0Options& options = {}) {
  const auto table = coefficients(grid, z, beta, nuis, target);
  auto sol = solve_h0(grid, table, options);
  sol.projection_residual = projection_condition_residual(grid, z, beta, nuis, sol, target, options.boundary);
  const double tolerance = options.effective_tolerance(grid);
  if (!(sol.projection_residual <= tolerance)) {
    std::ostringstream os;
    os << "projection-condition residual " << sol.projection_residual << " exceeds " << tolerance
       << " for z = " << z.str();
    throw SolverFailure(os.str());
  }
  return sol;
}

/// Writes `z1..zk,t,h0,dh0,residual` rows (header first when requested).
inline void write_h0_csv(std::ostream& os, const std::vector<H0Solution>& solutions, bool header = true) {
  if (solutions.empty()) return;
  const std::size_t k = solutions.front().z.size();
  if (header) {
    for (std::size_t i = 0; i < k; ++i) os << 'z' << i + 1 << ',';
    os << "t,h0,dh0,residual\n";
  }
  os.precision(17);
  for (const auto& sol : solutions) {
    for (std::size_t j = 0; j < sol.h0.size(); ++j) {
      for (double v : sol.z.values) os << v << ',';
      os << sol.grid[j] << ',' << sol.h0[j] << ',' << sol.dh0[j] << ',' << sol.residuals[j] << '\n';
    }
  }
}

}  // namespace podds
