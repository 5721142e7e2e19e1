#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "structpop/equilibrium.hpp"
#include "structpop/errors.hpp"
#include "structpop/grid.hpp"
#include "structpop/rates.hpp"

namespace structpop {

/// Density snapshot of the population at one instant.
struct PopulationState {
  SizeGrid grid;
  std::vector<double> density;  // individuals per size unit, on midpoints
  double time = 0.0;

  double total() const { return integrate(density, grid); }
};

struct SimulationTrace {
  std::vector<double> times;
  std::vector<double> totals;
  std::vector<double> snapshot_times;
  std::vector<std::vector<double>> snapshots;
  std::vector<double> mass_balance_residuals;  // one per step
};

/// Time derivative of the density: upwind differences of the flux gamma*p
/// with zero inflow at s=0 and free outflow at s=m, mortality sink, and the
/// recruitment integral. The total population P is recomputed from the
/// current density on every call (fully coupled nonlinearity).
inline std::vector<double> rhs(const PopulationState& state, const VitalRates& rates) {
  const SizeGrid& grid = state.grid;
  const std::size_t n = grid.n_cells;
  if (state.density.size() != n) throw ArgumentError("rhs: density/grid mismatch");
  const double P = integrate(state.density, grid);

  std::vector<double> out(n);
  double flux_left = 0.0;  // zero inflow boundary
  for (std::size_t i = 0; i < n; ++i) {
    const double s = grid.midpoints[i];
    const double g_right = rates.gamma(grid.edges[i + 1], P);
    if (!(g_right > kGammaFloor) || !(rates.gamma(s, P) > kGammaFloor))
      throw ModelError("rhs: gamma is not positive at s=" + std::to_string(s) +
                       ", P=" + std::to_string(P));
    const double flux_right = g_right * state.density[i];
    out[i] = -(flux_right - flux_left) / grid.weights[i] -
             rates.mu(s, P) * state.density[i];
    flux_left = flux_right;
  }

  if (rates.beta.is_separable()) {
    double birth_output = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      birth_output +=
          rates.beta.beta2(grid.midpoints[j]) * state.density[j] * grid.weights[j];
    for (std::size_t i = 0; i < n; ++i)
      out[i] += rates.beta.beta1()(grid.midpoints[i], P) * birth_output;
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      double birth = 0.0;
      for (std::size_t j = 0; j < n; ++j)
        birth += rates.beta(grid.midpoints[i], grid.midpoints[j], P) *
                 state.density[j] * grid.weights[j];
      out[i] += birth;
    }
  }
  return out;
}

/// Largest time step for which both Heun stages keep the density
/// nonnegative: dt * max_i (gamma/h + mu) <= 0.9. This single combined
/// bound implies both the transport CFL restriction and the reaction
/// positivity restriction.
inline double admissible_step(const PopulationState& state, const VitalRates& rates) {
  const SizeGrid& grid = state.grid;
  const double P = integrate(state.density, grid);
  double rate = 0.0;
  for (std::size_t i = 0; i < grid.n_cells; ++i) {
    const double g = rates.gamma(grid.edges[i + 1], P);
    if (!(g > kGammaFloor))
      throw ModelError("admissible_step: gamma is not positive");
    rate = std::fmax(rate, g / grid.weights[i] +
                               std::fmax(rates.mu(grid.midpoints[i], P), 0.0));
  }
  return 0.9 / rate;
}

/// One Heun (two-stage, second-order) step. The density stays nonnegative
/// for any dt within the admissible bound; a larger dt is rejected.
inline PopulationState step(const PopulationState& state, const VitalRates& rates,
                            double dt) {
  if (!(dt > 0.0)) throw ArgumentError("step: dt must be positive");
  const double dt_max = admissible_step(state, rates);
  if (dt > dt_max * (1.0 + 1e-12))
    throw StepSizeError("step: dt = " + std::to_string(dt) +
                        " exceeds the admissible bound " + std::to_string(dt_max));

  const std::size_t n = state.grid.n_cells;
  const auto k1 = rhs(state, rates);
  PopulationState predictor = state;
  for (std::size_t i = 0; i < n; ++i)
    predictor.density[i] = state.density[i] + dt * k1[i];
  const auto k2 = rhs(predictor, rates);

  PopulationState next = state;
  next.time = state.time + dt;
  for (std::size_t i = 0; i < n; ++i) {
    double v = state.density[i] + 0.5 * dt * (k1[i] + k2[i]);
    if (v < 0.0) v = 0.0;  // roundoff guard; the scheme is positive in exact arithmetic
    next.density[i] = v;
  }
  return next;
}

/// Integrates the model from p0 to t_end with automatic step sizes from the
/// positivity bound. Totals are recorded every step; density snapshots every
/// `cadence` time units when cadence > 0. The per-step mass-balance residual
/// compares the discrete change of P against the trapezoidal average of the
/// integrated right-hand side (birth minus death minus outflow).
inline SimulationTrace simulate(const std::vector<double>& p0, const VitalRates& rates,
                                const SizeGrid& grid, double t_end,
                                double cadence = 0.0) {
  if (t_end < 0.0) throw ArgumentError("simulate: t_end must be nonnegative");
  for (double v : p0)
    if (v < 0.0) throw ArgumentError("simulate: initial density must be nonnegative");

  PopulationState state{grid, p0, 0.0};
  SimulationTrace trace;
  trace.times.push_back(0.0);
  trace.totals.push_back(state.total());
  std::size_t next_snapshot = 0;
  auto maybe_snapshot = [&](const PopulationState& st) {
    if (cadence <= 0.0) return;
    if (st.time >= next_snapshot * cadence - 1e-12) {
      trace.snapshot_times.push_back(st.time);
      trace.snapshots.push_back(st.density);
      ++next_snapshot;
    }
  };
  maybe_snapshot(state);

  double mb_prev = integrate(rhs(state, rates), grid);
  while (state.time < t_end - 1e-12) {
    double dt = admissible_step(state, rates);
    if (cadence > 0.0) {
      const double to_snapshot = next_snapshot * cadence - state.time;
      if (to_snapshot > 1e-12) dt = std::fmin(dt, to_snapshot);
    }
    dt = std::fmin(dt, t_end - state.time);
    if (dt < 1e-12)
      throw StiffnessError("simulate: step size underflow at t = " +
                           std::to_string(state.time));

    const double P_before = state.total();
    state = step(state, rates, dt);
    const double P_after = state.total();
    const double mb_now = integrate(rhs(state, rates), grid);
    trace.mass_balance_residuals.push_back(
        std::fabs((P_after - P_before) / dt - 0.5 * (mb_prev + mb_now)));
    mb_prev = mb_now;

    trace.times.push_back(state.time);
    trace.totals.push_back(P_after);
    maybe_snapshot(state);
  }
  return trace;
}

enum class PerturbationMode { uniform, first_eigvec, random };

/// Initial data p0 = p_star * (1 + amplitude * shape), clipped at zero.
/// The shape has unit max norm: constant for `uniform`, seeded noise for
/// `random`, and a caller-provided profile (the dominant eigenvector of the
/// linearized operator) for `first_eigvec`.
inline std::vector<double> perturb_equilibrium(
    const EquilibriumSolution& eq, const SizeGrid& grid, double amplitude,
    PerturbationMode mode, std::uint64_t seed = 0,
    const std::vector<double>& eigvec_shape = {}) {
  if (eq.p_star.size() != grid.n_cells)
    throw ArgumentError("perturb_equilibrium: grid mismatch");
  if (std::fabs(amplitude) > 0.1)
    throw ArgumentError(
        "perturb_equilibrium: |amplitude| must stay within 0.1 of the "
        "equilibrium (linear regime)");

  std::vector<double> shape(grid.n_cells, 1.0);
  if (mode == PerturbationMode::random) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    double amax = 0.0;
    for (auto& v : shape) {
      v = u(rng);
      amax = std::fmax(amax, std::fabs(v));
    }
    if (amax > 0.0)
      for (auto& v : shape) v /= amax;
  } else if (mode == PerturbationMode::first_eigvec) {
    if (eigvec_shape.size() != grid.n_cells)
      throw ArgumentError(
          "perturb_equilibrium: first_eigvec mode needs the dominant "
          "eigenvector of the linearized operator");
    double amax = 0.0;
    for (double v : eigvec_shape) amax = std::fmax(amax, std::fabs(v));
    if (!(amax > 0.0))
      throw ArgumentError("perturb_equilibrium: zero eigenvector shape");
    shape.assign(eigvec_shape.begin(), eigvec_shape.end());
    for (auto& v : shape) v /= amax;
  }

  std::vector<double> p0(grid.n_cells);
  for (std::size_t i = 0; i < grid.n_cells; ++i)
    p0[i] = std::fmax(eq.p_star[i] * (1.0 + amplitude * shape[i]), 0.0);
  return p0;
}

struct GrowthRateEstimate {
  double rate = 0.0;
  double fit_residual = 0.0;  // rms residual of the log-linear fit
  bool oscillatory = false;   // envelope fallback was used
  std::size_t n_points = 0;
};

namespace detail {

inline GrowthRateEstimate fit_log_slope(const std::vector<double>& ts,
                                        const std::vector<double>& logs) {
  const std::size_t n = ts.size();
  double st = 0, sl = 0, stt = 0, stl = 0;
  for (std::size_t i = 0; i < n; ++i) {
    st += ts[i];
    sl += logs[i];
    stt += ts[i] * ts[i];
    stl += ts[i] * logs[i];
  }
  const double denom = n * stt - st * st;
  if (denom == 0.0)
    throw ArgumentError("measure_growth_rate: degenerate time samples");
  GrowthRateEstimate est;
  est.rate = (n * stl - st * sl) / denom;
  const double intercept = (sl - est.rate * st) / n;
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = logs[i] - (intercept + est.rate * ts[i]);
    ss += r * r;
  }
  est.fit_residual = std::sqrt(ss / n);
  est.n_points = n;
  return est;
}

}  // namespace detail

/// Least-squares slope of log |P(t) - P_ref| over a time window: the
/// empirical counterpart of the dominant eigenvalue's real part. When the
/// deviation changes sign inside the window (oscillatory mode), the fit
/// falls back to the envelope through the local maxima of |P - P_ref| and
/// the estimate is flagged oscillatory.
inline GrowthRateEstimate measure_growth_rate(const SimulationTrace& trace,
                                              double P_ref,
                                              std::pair<double, double> window) {
  if (!(window.first < window.second))
    throw ArgumentError("measure_growth_rate: empty window");
  std::vector<double> ts, devs;
  for (std::size_t i = 0; i < trace.times.size(); ++i) {
    const double t = trace.times[i];
    if (t < window.first || t > window.second) continue;
    ts.push_back(t);
    devs.push_back(trace.totals[i] - P_ref);
  }
  if (ts.size() < 3)
    throw ArgumentError("measure_growth_rate: window covers fewer than 3 samples");

  bool any_nonzero = false, sign_change = false;
  double prev = 0.0;
  for (double d : devs) {
    if (d != 0.0) {
      if (prev != 0.0 && (d > 0.0) != (prev > 0.0)) sign_change = true;
      prev = d;
      any_nonzero = true;
    }
  }
  if (!any_nonzero)
    throw ArgumentError("measure_growth_rate: deviation is identically zero");

  if (!sign_change) {
    std::vector<double> tt, ll;
    for (std::size_t i = 0; i < ts.size(); ++i)
      if (devs[i] != 0.0) {
        tt.push_back(ts[i]);
        ll.push_back(std::log(std::fabs(devs[i])));
      }
    if (tt.size() < 3)
      throw ArgumentError("measure_growth_rate: too few nonzero deviations");
    return detail::fit_log_slope(tt, ll);
  }

  // Envelope fallback: local maxima of |deviation|.
  std::vector<double> tt, ll;
  for (std::size_t i = 1; i + 1 < devs.size(); ++i) {
    const double a = std::fabs(devs[i - 1]), b = std::fabs(devs[i]),
                 c = std::fabs(devs[i + 1]);
    if (b > 0.0 && b >= a && b > c) {
      tt.push_back(ts[i]);
      ll.push_back(std::log(b));
    }
  }
  if (tt.size() < 2)
    throw ConvergenceError(
        "measure_growth_rate: oscillatory deviation with fewer than 2 envelope "
        "maxima in the window");
  auto est = detail::fit_log_slope(tt, ll);
  est.oscillatory = true;
  return est;
}

inline GrowthRateEstimate measure_growth_rate(const SimulationTrace& trace,
                                              const EquilibriumSolution& eq,
                                              std::pair<double, double> window) {
  return measure_growth_rate(trace, eq.P_star, window);
}

/// Time for an individual to grow from size 0 to s at frozen population
/// size P: the transit time of the transport semigroup.
inline std::vector<double> transit_time(const VitalRates& rates, const SizeGrid& grid,
                                        double P) {
  detail::require_gamma_positive(rates, grid, P, "transit_time");
  std::vector<double> inv_gamma(grid.n_cells);
  for (std::size_t i = 0; i < grid.n_cells; ++i)
    inv_gamma[i] = 1.0 / rates.gamma(grid.midpoints[i], P);
  return cumulative_integral(inv_gamma, grid);
}

/// Transit time over the whole size range; the pure transport semigroup is
/// nilpotent beyond this time.
inline double transit_time_total(const VitalRates& rates, const SizeGrid& grid,
                                 double P) {
  std::vector<double> inv_gamma(grid.n_cells);
  detail::require_gamma_positive(rates, grid, P, "transit_time_total");
  for (std::size_t i = 0; i < grid.n_cells; ++i)
    inv_gamma[i] = 1.0 / rates.gamma(grid.midpoints[i], P);
  return integrate(inv_gamma, grid);
}

}  // namespace structpop
