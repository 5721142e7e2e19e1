#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "structpop/complex_roots.hpp"
#include "structpop/eigen_dense.hpp"
#include "structpop/equilibrium.hpp"
#include "structpop/errors.hpp"
#include "structpop/grid.hpp"
#include "structpop/rates.hpp"
#include "structpop/simulate.hpp"

namespace structpop {

/// Environmental-feedback coefficient of the linearization,
///   rho(s) = gamma_sP(s,P) p(s) + mu_P(s,P) p(s) + gamma_P(s,P) p'(s),
/// with p' reconstructed from the stationary equation rather than
/// differenced from the sampled profile.
inline std::vector<double> compute_rho_star(const VitalRates& rates,
                                            const EquilibriumSolution& eq,
                                            const SizeGrid& grid) {
  const auto dp = stationary_density_derivative(rates, eq, grid);
  const double P = eq.P_star;
  std::vector<double> rho(grid.n_cells);
  for (std::size_t i = 0; i < grid.n_cells; ++i) {
    const double s = grid.midpoints[i];
    rho[i] = rates.gamma.dsdP(s, P) * eq.p_star[i] +
             rates.mu.dP(s, P) * eq.p_star[i] + rates.gamma.dP(s, P) * dp[i];
  }
  return rho;
}

namespace detail {

/// Sensitivity of the recruitment output to the population size,
/// q(s) = int_0^m beta_P(s, z, P) p(z) dz, on midpoints.
inline std::vector<double> kernel_P_sensitivity(const VitalRates& rates,
                                                const EquilibriumSolution& eq,
                                                const SizeGrid& grid) {
  const double P = eq.P_star;
  std::vector<double> q(grid.n_cells, 0.0);
  if (rates.beta.is_separable()) {
    double weighted = 0.0;
    for (std::size_t j = 0; j < grid.n_cells; ++j)
      weighted += rates.beta.beta2(grid.midpoints[j]) * eq.p_star[j] * grid.weights[j];
    for (std::size_t i = 0; i < grid.n_cells; ++i)
      q[i] = rates.beta.beta1().dP(grid.midpoints[i], P) * weighted;
  } else {
    for (std::size_t i = 0; i < grid.n_cells; ++i)
      for (std::size_t j = 0; j < grid.n_cells; ++j)
        q[i] += rates.beta.dP(grid.midpoints[i], grid.midpoints[j], P) *
                eq.p_star[j] * grid.weights[j];
  }
  return q;
}

/// Feedback coefficient in the same upwind flux-difference form as the
/// assembled transport term, so the linearized matrix is exactly the
/// Jacobian of the discrete right-hand side:
///   rho_i = (gamma_P(e_{i+1}) p_i - gamma_P(e_i) p_{i-1}) / w_i + mu_P(s_i) p_i.
inline std::vector<double> discrete_rho_star(const VitalRates& rates,
                                             const EquilibriumSolution& eq,
                                             const SizeGrid& grid) {
  const double P = eq.P_star;
  std::vector<double> rho(grid.n_cells);
  double flux_left = 0.0;
  for (std::size_t i = 0; i < grid.n_cells; ++i) {
    const double flux_right = rates.gamma.dP(grid.edges[i + 1], P) * eq.p_star[i];
    rho[i] = (flux_right - flux_left) / grid.weights[i] +
             rates.mu.dP(grid.midpoints[i], P) * eq.p_star[i];
    flux_left = flux_right;
  }
  return rho;
}

}  // namespace detail

/// Linearization of the model around an equilibrium: the stationary
/// operator at P_star plus two rank-one couplings through the total
/// population (environmental feedback and fertility sensitivity).
struct LinearizedOperator {
  EquilibriumSolution equilibrium;
  std::vector<double> rho_star;  // analytic feedback coefficient
  Eigen::MatrixXd matrix;
  double jacobian_max_rel_error = 0.0;  // from the finite-difference cross-check
};

/// Assembles the linearized matrix and verifies it against the numerical
/// Jacobian of the simulator's discrete right-hand side (central
/// differences, step 1e-6 * max(1, |p_i|)). Disagreement beyond 1e-5
/// relative in the max norm is an assembly error.
inline LinearizedOperator assemble_linearized(const VitalRates& rates,
                                              const EquilibriumSolution& eq,
                                              const SizeGrid& grid,
                                              bool cross_check = true) {
  const std::size_t n = grid.n_cells;
  if (eq.p_star.size() != n)
    throw ArgumentError("assemble_linearized: grid mismatch");

  LinearizedOperator lin;
  lin.equilibrium = eq;
  lin.rho_star = compute_rho_star(rates, eq, grid);
  lin.matrix = assemble_B_P(rates, grid, eq.P_star).entries;

  const auto q = detail::kernel_P_sensitivity(rates, eq, grid);
  const auto rho_d = detail::discrete_rho_star(rates, eq, grid);
  for (std::size_t i = 0; i < n; ++i) {
    const double coupling = q[i] - rho_d[i];
    for (std::size_t j = 0; j < n; ++j)
      lin.matrix(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) +=
          coupling * grid.weights[j];
  }

  if (cross_check) {
    const double scale = lin.matrix.cwiseAbs().maxCoeff();
    PopulationState probe{grid, eq.p_star, 0.0};
    double worst = 0.0;
    std::size_t wi = 0, wj = 0;
    std::vector<double> base = eq.p_star;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = 1e-6 * std::fmax(1.0, std::fabs(base[j]));
      probe.density = base;
      probe.density[j] = base[j] + h;
      const auto up = rhs(probe, rates);
      probe.density[j] = base[j] - h;
      const auto down = rhs(probe, rates);
      for (std::size_t i = 0; i < n; ++i) {
        const double fd = (up[i] - down[i]) / (2.0 * h);
        const double diff = std::fabs(
            fd - lin.matrix(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
        if (diff > worst) {
          worst = diff;
          wi = i;
          wj = j;
        }
      }
    }
    lin.jacobian_max_rel_error = worst / std::fmax(scale, 1e-300);
    if (lin.jacobian_max_rel_error > 1e-5)
      throw AssemblyError(
          "assemble_linearized: matrix disagrees with the finite-difference "
          "Jacobian at entry (" + std::to_string(wi) + ", " + std::to_string(wj) +
          "): relative error " + std::to_string(lin.jacobian_max_rel_error));
  }
  return lin;
}

/// Truth value plus the margin by which an inequality holds (negative
/// margin: it fails by that much).
struct ConditionMargin {
  bool holds = false;
  double margin = 0.0;
};

/// Positivity of the linearized semigroup: rho(s) <= beta(s,y,P) + q(s) on
/// the midpoint lattice. Returns the minimal slack.
inline ConditionMargin check_positivity_condition(const VitalRates& rates,
                                                  const EquilibriumSolution& eq,
                                                  const SizeGrid& grid) {
  const auto rho = compute_rho_star(rates, eq, grid);
  const auto q = detail::kernel_P_sensitivity(rates, eq, grid);
  double min_slack = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < grid.n_cells; ++i)
    for (std::size_t j = 0; j < grid.n_cells; ++j)
      min_slack = std::fmin(
          min_slack,
          rates.beta(grid.midpoints[i], grid.midpoints[j], eq.P_star) + q[i] - rho[i]);
  return {min_slack >= 0.0, min_slack};
}

/// Sufficient stability bound: the mortality floor must dominate the
/// sup norm (over s) of sup_y (beta + q - rho). Positive margin implies a
/// negative growth bound of the linearized semigroup.
inline ConditionMargin check_sufficient_stability(const VitalRates& rates,
                                                  const EquilibriumSolution& eq,
                                                  const SizeGrid& grid) {
  const auto rho = compute_rho_star(rates, eq, grid);
  const auto q = detail::kernel_P_sensitivity(rates, eq, grid);
  double mu_floor = std::numeric_limits<double>::infinity();
  double sup_norm = 0.0;
  for (std::size_t i = 0; i < grid.n_cells; ++i) {
    mu_floor = std::fmin(mu_floor, rates.mu(grid.midpoints[i], eq.P_star));
    double sup_y = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < grid.n_cells; ++j)
      sup_y = std::fmax(sup_y, rates.beta(grid.midpoints[i], grid.midpoints[j],
                                          eq.P_star) + q[i] - rho[i]);
    sup_norm = std::fmax(sup_norm, std::fabs(sup_y));
  }
  const double margin = mu_floor - sup_norm;
  return {margin > 0.0, margin};
}

namespace detail {

/// Shared ingredients of the characteristic-equation evaluations at an
/// equilibrium: transit times Gamma(s), the zero-shift survival factor,
/// and the coefficient profiles. The lambda dependence of every integral
/// enters only through exp(+-lambda*Gamma(s)), so evaluations at many
/// lambda reuse these real arrays.
struct CharContext {
  const SizeGrid* grid = nullptr;
  std::vector<double> transit;    // Gamma(s_i)
  std::vector<double> d_transit;  // Gamma increments between midpoints
  std::vector<double> hazard_w;   // W(s_i) = -log F(0, s_i)
  std::vector<double> d_hazard;   // W increments between midpoints
  std::vector<double> g;          // (beta1_P * Pbar - rho) / gamma
  std::vector<double> b1_over_g;  // beta1 / gamma
  std::vector<double> beta2;      // beta2(s_i)
  std::vector<double> inv_gamma;  // 1 / gamma(s_i, P)
  double transit_total = 0.0;

  static CharContext build(const VitalRates& rates, const EquilibriumSolution& eq,
                           const SizeGrid& grid, bool need_kernel) {
    CharContext ctx;
    ctx.grid = &grid;
    ctx.transit = transit_time(rates, grid, eq.P_star);
    ctx.transit_total = transit_time_total(rates, grid, eq.P_star);
    const std::size_t n = grid.n_cells;
    ctx.inv_gamma.resize(n);
    std::vector<double> hazard(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double s = grid.midpoints[i];
      ctx.inv_gamma[i] = 1.0 / rates.gamma(s, eq.P_star);
      hazard[i] = (rates.gamma.ds(s, eq.P_star) + rates.mu(s, eq.P_star)) *
                  ctx.inv_gamma[i];
    }
    ctx.hazard_w = cumulative_integral(hazard, grid);
    ctx.d_transit.resize(n);
    ctx.d_hazard.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      ctx.d_transit[i] = i == 0 ? ctx.transit[0] : ctx.transit[i] - ctx.transit[i - 1];
      ctx.d_hazard[i] = i == 0 ? ctx.hazard_w[0] : ctx.hazard_w[i] - ctx.hazard_w[i - 1];
    }
    if (need_kernel) {
      if (!rates.beta.is_separable())
        throw RouteError(
            "characteristic determinant: fertility kernel is not separable");
      const auto rho = compute_rho_star(rates, eq, grid);
      double weighted = 0.0;
      for (std::size_t j = 0; j < n; ++j)
        weighted += rates.beta.beta2(grid.midpoints[j]) * eq.p_star[j] *
                    grid.weights[j];
      ctx.g.resize(n);
      ctx.b1_over_g.resize(n);
      ctx.beta2.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double s = grid.midpoints[i];
        ctx.g[i] = (rates.beta.beta1().dP(s, eq.P_star) * weighted - rho[i]) *
                   ctx.inv_gamma[i];
        ctx.b1_over_g[i] = rates.beta.beta1()(s, eq.P_star) * ctx.inv_gamma[i];
        ctx.beta2[i] = rates.beta.beta2(s);
      }
    }
    return ctx;
  }

  // The integrands carry exp(-lambda (Gamma(s)-Gamma(y)) - (W(s)-W(y))) with
  // y <= s, so for Re lambda >= 0 everything stays bounded. Leftward of
  // that the integrals genuinely grow like exp(|Re lambda| Gamma(m)); the
  // representable domain (determinant entries get squared) is roughly
  // Re lambda > -300 / Gamma(m).
  void check_exponent_range(double re_lambda) const {
    if (re_lambda >= 0.0) return;
    double w_span = 0.0;
    for (double w : hazard_w) w_span = std::fmax(w_span, std::fabs(w));
    if (-re_lambda * transit_total + w_span > 300.0)
      throw RangeError(
          "characteristic integrand overflows: |Re lambda| * Gamma(m) too "
          "large (Gamma(m) = " + std::to_string(transit_total) + ")");
  }

  /// The four determinant entries at one lambda. The inner integrals are
  /// carried along the grid by a scaled recurrence: only exponentials of
  /// per-cell increments are formed.
  struct Entries {
    Complex a1, a2, a3, a4;
  };

  Entries entries(Complex lambda) const {
    check_exponent_range(lambda.real());
    const std::size_t n = grid->n_cells;
    const auto& w = grid->weights;
    Complex a1{}, a2{}, a3{}, a4{};
    Complex Qg{}, Qb{};  // half-cell inner integrals relative to cell i
    for (std::size_t i = 0; i < n; ++i) {
      if (i == 0) {
        Qg = 0.5 * w[0] * g[0];
        Qb = 0.5 * w[0] * b1_over_g[0];
      } else {
        const Complex T = std::exp(-lambda * d_transit[i] - d_hazard[i]);
        Qg = (Qg + 0.5 * w[i - 1] * g[i - 1]) * T + 0.5 * w[i] * g[i];
        Qb = (Qb + 0.5 * w[i - 1] * b1_over_g[i - 1]) * T + 0.5 * w[i] * b1_over_g[i];
      }
      a1 -= w[i] * Qg;
      a2 -= w[i] * Qb;
      a3 -= w[i] * beta2[i] * Qg;
      a4 -= w[i] * beta2[i] * Qb;
    }
    return {a1, a2, a3, a4};
  }

  Complex determinant(Complex lambda) const {
    const auto e = entries(lambda);
    return (1.0 + e.a1) * (1.0 + e.a4) - e.a2 * e.a3;
  }

  /// Scalar weighted double integral with kernel coefficient d(y):
  /// int_0^m int_0^s exp(-int_y^s (lambda + gamma_s + mu)/gamma) d(y) dy ds.
  double weighted_double_integral(const std::vector<double>& d,
                                  double lambda) const {
    check_exponent_range(lambda);
    const std::size_t n = grid->n_cells;
    const auto& w = grid->weights;
    double acc = 0.0, Q = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (i == 0) {
        Q = 0.5 * w[0] * d[0];
      } else {
        const double T = std::exp(-lambda * d_transit[i] - d_hazard[i]);
        Q = (Q + 0.5 * w[i - 1] * d[i - 1]) * T + 0.5 * w[i] * d[i];
      }
      acc += w[i] * Q;
    }
    return acc;
  }

  /// K(lambda): the scalar characteristic function of the uniform rank-one
  /// minorant with strength eps.
  double K(double eps, double lambda) const {
    return eps * weighted_double_integral(inv_gamma, lambda);
  }

  /// Left side of the reduced characteristic equation for constant beta2.
  double reduced(double lambda, double beta2_const) const {
    std::vector<double> d(grid->n_cells);
    for (std::size_t i = 0; i < grid->n_cells; ++i)
      d[i] = g[i] + beta2_const * b1_over_g[i];
    return weighted_double_integral(d, lambda);
  }
};

}  // namespace detail

/// Scalar instability test function: the characteristic function of the
/// uniform rank-one lower bound with strength eps. Real lambda only; very
/// negative lambda overflows the integrand (the usable domain is roughly
/// lambda >= -700 / Gamma(m)).
inline double K_instability(const VitalRates& rates, const EquilibriumSolution& eq,
                            const SizeGrid& grid, double eps, double lambda) {
  if (!(eps > 0.0)) throw ArgumentError("K_instability: eps must be positive");
  const auto ctx = detail::CharContext::build(rates, eq, grid, /*need_kernel=*/false);
  return ctx.K(eps, lambda);
}

struct InstabilityCertificate {
  double eps = 0.0;          // uniform minorant strength
  double K_at_zero = 0.0;    // K(0) > 1 certifies instability
  double lambda_root = 0.0;  // positive solution of K(lambda) = 1
};

/// Searches for an instability certificate: the largest uniform minorant
/// eps of beta + q - rho over the lattice; when it is positive and
/// K(0) > 1, the characteristic equation K(lambda) = 1 has a positive real
/// root, which is returned with the certificate.
inline std::optional<InstabilityCertificate> check_instability(
    const VitalRates& rates, const EquilibriumSolution& eq, const SizeGrid& grid) {
  const auto slack = check_positivity_condition(rates, eq, grid);
  const double eps_max = slack.margin;
  if (!(eps_max > 0.0)) return std::nullopt;

  const auto ctx = detail::CharContext::build(rates, eq, grid, /*need_kernel=*/false);
  const double K0 = ctx.K(eps_max, 0.0);
  if (!(K0 > 1.0)) return std::nullopt;

  // K is strictly decreasing in real lambda and tends to 0, so the root is
  // bracketed by doubling.
  double hi = 1.0;
  while (ctx.K(eps_max, hi) > 1.0) {
    hi *= 2.0;
    if (hi > 1e6)
      throw ConvergenceError("check_instability: failed to bracket the root of K");
  }
  const double root = bracketed_root(
      [&](double l) { return ctx.K(eps_max, l) - 1.0; }, 0.0, hi, 1e-10);

  InstabilityCertificate cert;
  cert.eps = eps_max;
  cert.K_at_zero = K0;
  cert.lambda_root = root;
  return cert;
}

/// 2x2 characteristic determinant of the linearized operator for separable
/// fertility; its zero set is exactly the point spectrum.
inline Complex char_determinant(const VitalRates& rates, const EquilibriumSolution& eq,
                                const SizeGrid& grid, Complex lambda) {
  const auto ctx = detail::CharContext::build(rates, eq, grid, /*need_kernel=*/true);
  return ctx.determinant(lambda);
}

namespace detail {

/// Winding count with a perturbed-rectangle retry: a zero (numerically) on
/// the contour, or close enough to starve the adaptive phase sampling, is
/// resolved by growing the rectangle a little. Growing (rather than
/// shifting) cannot lose a zero; duplicates from overlapping siblings are
/// merged later.
inline int winding_with_retry(const std::function<Complex(Complex)>& F,
                              Rectangle rect, double jitter_scale,
                              std::size_t per_side) {
  for (int attempt = 0;; ++attempt) {
    try {
      return winding_count(F, rect, per_side);
    } catch (const BoundaryZeroError&) {
      if (attempt >= 3) throw;
    } catch (const ConvergenceError&) {
      if (attempt >= 3) throw;
    }
    const double jr = 1e-4 * jitter_scale * std::pow(37.0, attempt);
    rect = Rectangle(rect.re_lo - jr, rect.re_hi + jr, rect.im_lo - 1.3 * jr,
                     rect.im_hi + 1.7 * jr);
  }
}

inline void collect_char_roots(const CharContext& ctx, const Rectangle& rect,
                               std::vector<Complex>& roots, int depth) {
  auto F = [&](Complex z) { return ctx.determinant(z); };
  const double scale = std::fmax(rect.width(), rect.height());
  // The top-level contour is sampled densely; subdivided cells start coarse
  // and rely on the phase-driven refinement inside winding_count.
  const int count = winding_with_retry(F, rect, scale, depth == 0 ? 256 : 64);
  if (count == 0) return;

  const Complex center(0.5 * (rect.re_lo + rect.re_hi),
                       0.5 * (rect.im_lo + rect.im_hi));
  const double diam = std::hypot(rect.width(), rect.height());
  const bool terminal = diam < 1e-8 || depth > 60;
  if (count == 1 || terminal) {
    try {
      const Complex z = refine_complex_root(F, center, 1e-11, 2.0 * diam + 1.0);
      if ((count == 1 && rect.contains(z.real(), z.imag(), 1e-12 * (1.0 + diam))) ||
          terminal) {
        roots.push_back(z);
        for (int extra = 1; extra < count; ++extra) roots.push_back(z);
        return;
      }
      // Newton escaped the cell (seed too far from the zero): subdivide.
    } catch (const ConvergenceError&) {
      if (terminal) throw;
    } catch (const RangeError&) {
      if (terminal) throw;
    }
  }

  const double cx = 0.5 * (rect.re_lo + rect.re_hi);
  const double cy = 0.5 * (rect.im_lo + rect.im_hi);
  collect_char_roots(ctx, Rectangle(rect.re_lo, cx, rect.im_lo, cy), roots, depth + 1);
  collect_char_roots(ctx, Rectangle(cx, rect.re_hi, rect.im_lo, cy), roots, depth + 1);
  collect_char_roots(ctx, Rectangle(rect.re_lo, cx, cy, rect.im_hi), roots, depth + 1);
  collect_char_roots(ctx, Rectangle(cx, rect.re_hi, cy, rect.im_hi), roots, depth + 1);
}

}  // namespace detail

/// All zeros of the characteristic determinant inside the region, found by
/// argument-principle counting with recursive quadrisection and polished by
/// Newton iteration. Roots are returned sorted by descending real part and
/// symmetrized into conjugate pairs (the data are real).
inline std::vector<Complex> find_char_roots(const VitalRates& rates,
                                            const EquilibriumSolution& eq,
                                            const SizeGrid& grid,
                                            const Rectangle& region) {
  const auto ctx = detail::CharContext::build(rates, eq, grid, /*need_kernel=*/true);
  std::vector<Complex> raw;
  detail::collect_char_roots(ctx, region, raw, 0);

  // Deduplicate (quadrisection can hand the same zero to two neighbors).
  const double tol_merge =
      1e-7 * std::fmax(1.0, std::fmax(region.width(), region.height()));
  std::vector<Complex> roots;
  for (const auto& z : raw) {
    bool dup = false;
    for (const auto& r : roots)
      if (std::abs(z - r) < tol_merge) {
        dup = true;
        break;
      }
    if (!dup) roots.push_back(z);
  }

  // Conjugate symmetry: complete and average pairs.
  std::vector<Complex> completed = roots;
  for (const auto& z : roots) {
    if (std::fabs(z.imag()) <= 1e-9) continue;
    const Complex zc = std::conj(z);
    bool has_partner = false;
    for (const auto& r : completed)
      if (std::abs(r - zc) < 1e-5) has_partner = true;
    if (!has_partner && region.contains(zc.real(), zc.imag())) {
      try {
        const Complex refined =
            refine_complex_root([&](Complex w) { return ctx.determinant(w); }, zc,
                                1e-11);
        if (region.contains(refined.real(), refined.imag(), tol_merge))
          completed.push_back(refined);
      } catch (const Error&) {
        // leave the pair incomplete; the sort below still reports z itself
      }
    }
  }
  for (auto& z : completed) {
    if (z.imag() <= 1e-9) continue;
    for (auto& w : completed) {
      if (&w == &z) continue;
      if (std::abs(std::conj(w) - z) < 1e-5) {
        const Complex mean = 0.5 * (z + std::conj(w));
        z = mean;
        w = std::conj(mean);
      }
    }
  }

  std::sort(completed.begin(), completed.end(), [](Complex a, Complex b) {
    if (a.real() != b.real()) return a.real() > b.real();
    return a.imag() > b.imag();
  });
  return completed;
}

/// Left side of the reduced (scalar) characteristic equation for constant
/// beta2, minus one; its zeros coincide with those of the 2x2 determinant.
inline double reduced_char_constant_beta2(const VitalRates& rates,
                                          const EquilibriumSolution& eq,
                                          const SizeGrid& grid, double lambda) {
  const auto ctx = detail::CharContext::build(rates, eq, grid, /*need_kernel=*/true);
  double b2 = ctx.beta2.front();
  for (double v : ctx.beta2)
    if (std::fabs(v - b2) > 1e-12 * std::fmax(1.0, std::fabs(b2)))
      throw RouteError("reduced_char_constant_beta2: beta2 is not constant");
  return ctx.reduced(lambda, b2) - 1.0;
}

struct ReducedStabilityCondition {
  bool stable = false;          // value_at_zero < 1 and positivity holds
  double value_at_zero = 0.0;   // reduced characteristic integral at lambda = 0
  bool positivity_ok = false;   // g*gamma + beta1*beta2 >= 0 on the grid
  double positivity_min = 0.0;
};

/// Stability test of the reduced route: the dominant root of the scalar
/// characteristic equation is real when g*gamma + beta1*beta2 >= 0, and
/// negative precisely when the lambda = 0 value is below one.
inline ReducedStabilityCondition reduced_stability_condition(
    const VitalRates& rates, const EquilibriumSolution& eq, const SizeGrid& grid) {
  const auto ctx = detail::CharContext::build(rates, eq, grid, /*need_kernel=*/true);
  double b2 = ctx.beta2.front();
  for (double v : ctx.beta2)
    if (std::fabs(v - b2) > 1e-12 * std::fmax(1.0, std::fabs(b2)))
      throw RouteError("reduced_stability_condition: beta2 is not constant");

  ReducedStabilityCondition out;
  out.value_at_zero = ctx.reduced(0.0, b2);
  out.positivity_min = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < grid.n_cells; ++i) {
    const double v = (ctx.g[i] + b2 * ctx.b1_over_g[i]) / ctx.inv_gamma[i];
    out.positivity_min = std::fmin(out.positivity_min, v);
  }
  out.positivity_ok = out.positivity_min >= 0.0;
  out.stable = out.positivity_ok && out.value_at_zero < 1.0;
  return out;
}

enum class Verdict { stable, unstable, inconclusive };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::stable: return "stable";
    case Verdict::unstable: return "unstable";
    default: return "inconclusive";
  }
}

/// Aggregate spectral diagnosis of one equilibrium.
struct SpectralReport {
  Complex dominant_matrix_eig;
  std::vector<Complex> char_roots;             // separable route only
  std::optional<Complex> rightmost_char_root;
  bool positivity_condition_holds = false;
  double positivity_margin = 0.0;
  bool sufficient_stability_holds = false;
  double sufficient_margin = 0.0;
  std::optional<InstabilityCertificate> instability_certificate;
  Verdict verdict = Verdict::inconclusive;
  double cross_check_gap = std::numeric_limits<double>::quiet_NaN();
  double tol_verdict = 0.0;
  std::optional<Rectangle> searched_region;
  double jacobian_max_rel_error = 0.0;

  /// True when the nonlocal part of the linearization cancels to grid
  /// noise: the operator is then numerically a pure transport-reaction
  /// operator with empty point spectrum (nilpotent semigroup), and the
  /// discrete eigenvalues carry no rate information.
  bool negligible_feedback = false;
  double feedback_ratio = 0.0;
};

namespace detail {

/// Ratio of the combined nonlocal coupling to the size of its constituent
/// pieces; near-zero means the couplings cancel and the linearization is
/// numerically nilpotent.
inline double feedback_cancellation_ratio(const VitalRates& rates,
                                          const EquilibriumSolution& eq,
                                          const SizeGrid& grid) {
  const auto q = kernel_P_sensitivity(rates, eq, grid);
  const auto rho = discrete_rho_star(rates, eq, grid);
  double combined = 0.0, parts = 0.0;
  for (std::size_t i = 0; i < grid.n_cells; ++i) {
    double beta_max = 0.0;
    for (std::size_t j = 0; j < grid.n_cells; ++j)
      beta_max = std::fmax(
          beta_max, std::fabs(rates.beta(grid.midpoints[i], grid.midpoints[j],
                                         eq.P_star)));
    double combined_i = 0.0;
    for (std::size_t j = 0; j < grid.n_cells; ++j)
      combined_i = std::fmax(
          combined_i, std::fabs(rates.beta(grid.midpoints[i], grid.midpoints[j],
                                           eq.P_star) + q[i] - rho[i]));
    combined = std::fmax(combined, combined_i);
    parts = std::fmax(parts, beta_max + std::fabs(q[i]) + std::fabs(rho[i]));
  }
  if (parts <= 0.0) return combined > 0.0 ? 1.0 : 0.0;
  return combined / parts;
}

}  // namespace detail

/// Runs every stability check and issues a verdict cross-checked between
/// the matrix route and (for separable kernels) the characteristic-equation
/// route. The verdict tolerance scales with the grid spacing because the
/// upwind discretization biases eigenvalues by O(h).
inline SpectralReport spectral_verdict(const VitalRates& rates,
                                       const EquilibriumSolution& eq,
                                       const SizeGrid& grid,
                                       std::optional<Rectangle> region = std::nullopt) {
  SpectralReport report;
  report.tol_verdict = 10.0 * grid.spacing();

  const auto lin = assemble_linearized(rates, eq, grid);
  report.jacobian_max_rel_error = lin.jacobian_max_rel_error;
  const auto spectrum = dense_eigen(lin.matrix);
  report.dominant_matrix_eig = spectrum.dominant();

  const auto pos = check_positivity_condition(rates, eq, grid);
  report.positivity_condition_holds = pos.holds;
  report.positivity_margin = pos.margin;
  const auto suff = check_sufficient_stability(rates, eq, grid);
  report.sufficient_stability_holds = suff.holds;
  report.sufficient_margin = suff.margin;
  report.instability_certificate = check_instability(rates, eq, grid);

  report.feedback_ratio = detail::feedback_cancellation_ratio(rates, eq, grid);
  report.negligible_feedback = report.feedback_ratio < 1e-3;

  if (rates.beta.is_separable()) {
    Rectangle search = region.value_or(Rectangle(
        -10.0 / transit_time_total(rates, grid, eq.P_star),
        2.0 * std::fabs(report.dominant_matrix_eig.real()) + 1.0, -50.0, 50.0));
    report.searched_region = search;
    report.char_roots = find_char_roots(rates, eq, grid, search);
    if (!report.char_roots.empty())
      report.rightmost_char_root = report.char_roots.front();
  }

  if (report.rightmost_char_root) {
    const Complex r = *report.rightmost_char_root;
    const Complex d = report.dominant_matrix_eig;
    report.cross_check_gap = std::fmin(std::abs(d - r), std::abs(d - std::conj(r)));
    if (report.cross_check_gap > 0.5 && !report.negligible_feedback)
      throw InconsistencyError(
          "spectral_verdict: matrix route gives " +
          std::to_string(d.real()) + " but the characteristic equation gives " +
          std::to_string(r.real()) + "; refine the grid");
  }

  const double re_dom = report.dominant_matrix_eig.real();
  const bool char_says_stable =
      !rates.beta.is_separable() || !report.rightmost_char_root ||
      report.rightmost_char_root->real() < -report.tol_verdict;
  if (report.instability_certificate || re_dom > report.tol_verdict)
    report.verdict = Verdict::unstable;
  else if (re_dom < -report.tol_verdict && char_says_stable)
    report.verdict = Verdict::stable;
  else
    report.verdict = Verdict::inconclusive;
  return report;
}

}  // namespace structpop
