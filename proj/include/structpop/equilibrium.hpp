#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "structpop/eigen_dense.hpp"
#include "structpop/errors.hpp"
#include "structpop/grid.hpp"
#include "structpop/rates.hpp"
#include "structpop/roots.hpp"

namespace structpop {

/// A positive stationary solution: total population P_star, density
/// p_star on grid midpoints, and diagnostics. P_bar_star (the weighted
/// birth output) is only defined on the separable route.
struct EquilibriumSolution {
  enum class Route { separable, general };

  double P_star = 0.0;
  std::vector<double> p_star;
  std::optional<double> P_bar_star;
  Route route = Route::separable;
  double residual_stationary = 0.0;  // L1 residual of the discrete stationary equation
  double residual_total = 0.0;       // |integrate(p_star) - P_star|
};

/// Discretized stationary operator at frozen population size P: upwind
/// transport of the flux gamma*u with zero inflow at s=0 and free outflow
/// at s=m, mortality on the diagonal, recruitment kernel times quadrature
/// weights.
struct OperatorMatrix {
  double P = 0.0;
  Eigen::MatrixXd entries;
};

namespace detail {

inline void require_gamma_positive(const VitalRates& rates, const SizeGrid& grid,
                                   double P, const char* who) {
  for (double s : grid.midpoints)
    if (!(rates.gamma(s, P) > kGammaFloor))
      throw ModelError(std::string(who) + ": gamma(s=" + std::to_string(s) +
                       ", P=" + std::to_string(P) + ") is not positive");
  for (double s : grid.edges)
    if (!(rates.gamma(s, P) > kGammaFloor))
      throw ModelError(std::string(who) + ": gamma(s=" + std::to_string(s) +
                       ", P=" + std::to_string(P) + ") is not positive");
}

/// Half-cell prefix sums: out[k] approximates the integral of the sampled
/// function from 0 to midpoints[k] (same convention as cumulative_integral).
template <typename T>
inline std::vector<T> prefix_midpoint(const std::vector<T>& cell_terms,
                                      const SizeGrid& grid) {
  std::vector<T> out(grid.n_cells);
  T acc{};
  for (std::size_t i = 0; i < grid.n_cells; ++i) {
    const T full = grid.weights[i] * cell_terms[i];
    out[i] = acc + 0.5 * full;
    acc += full;
  }
  return out;
}

/// Exponentially weighted half-cell prefix sums,
///   Q[i] = sum_{j<i} w_j d_j exp(W[j] - W[i]) + 0.5 w_i d_i,
/// evaluated by a scaled recurrence so that only exponentials of
/// *differences* appear. For nondecreasing W every factor is <= 1, which
/// keeps strongly damped models (large mu/gamma) representable where the
/// naive exp(W[j]) * exp(-W[i]) factorization would overflow.
inline std::vector<double> survival_weighted_prefix(const std::vector<double>& d,
                                                    const std::vector<double>& W,
                                                    const SizeGrid& grid) {
  const std::size_t n = grid.n_cells;
  std::vector<double> Q(n);
  double carried = 0.0;  // sum_{j<i} w_j d_j exp(W[j] - W[i])
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0)
      carried = (carried + grid.weights[i - 1] * d[i - 1]) *
                std::exp(W[i - 1] - W[i]);
    Q[i] = carried + 0.5 * grid.weights[i] * d[i];
  }
  return Q;
}

inline std::string spectrum_head(const Spectrum& spec, std::size_t count = 8) {
  std::ostringstream os;
  os.precision(6);
  for (std::size_t i = 0; i < spec.eigenvalues.size() && i < count; ++i) {
    if (i) os << ", ";
    os << spec.eigenvalues[i].real() << (spec.eigenvalues[i].imag() < 0 ? "-" : "+")
       << std::fabs(spec.eigenvalues[i].imag()) << "i";
  }
  return os.str();
}

/// Dominant eigenvalue only (no eigenvectors); used by the root scan in P.
inline double dominant_eigenvalue_only(const Eigen::MatrixXd& A) {
  Eigen::EigenSolver<Eigen::MatrixXd> solver(A, /*computeEigenvectors=*/false);
  if (solver.info() != Eigen::Success)
    throw NumericalError("dominant_eigenvalue_only: QR iteration failed");
  double best = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < solver.eigenvalues().size(); ++i)
    best = std::fmax(best, solver.eigenvalues()[i].real());
  return best;
}

inline double stationary_residual_l1(const Eigen::MatrixXd& B,
                                     const std::vector<double>& p,
                                     const SizeGrid& grid) {
  const auto n = static_cast<Eigen::Index>(grid.n_cells);
  Eigen::Map<const Eigen::VectorXd> pv(p.data(), n);
  Eigen::VectorXd r = B * pv;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    acc += grid.weights[static_cast<std::size_t>(i)] * std::fabs(r[i]);
  return acc;
}

}  // namespace detail

/// Survival-type factor F(s, P) = exp(-int_0^s (gamma_s + mu)/gamma),
/// sampled on grid midpoints. F(0+) ~ 1 and F > 0 everywhere.
inline std::vector<double> survival_factor(const VitalRates& rates,
                                           const SizeGrid& grid, double P) {
  if (P < 0.0) throw ArgumentError("survival_factor: P must be nonnegative");
  detail::require_gamma_positive(rates, grid, P, "survival_factor");
  std::vector<double> integrand(grid.n_cells);
  for (std::size_t i = 0; i < grid.n_cells; ++i) {
    const double s = grid.midpoints[i];
    integrand[i] = (rates.gamma.ds(s, P) + rates.mu(s, P)) / rates.gamma(s, P);
  }
  auto cum = cumulative_integral(integrand, grid);
  std::vector<double> F(grid.n_cells);
  for (std::size_t i = 0; i < grid.n_cells; ++i) F[i] = std::exp(-cum[i]);
  return F;
}

/// Expected lifetime offspring production per individual at frozen
/// population size P (separable fertility only):
///   R(P) = int_0^m int_0^s beta1(y,P) beta2(s) / gamma(s,P)
///          * exp(-int_y^s mu/gamma) dy ds,
/// computed with exponentials of differences of the cumulative mu/gamma
/// integral.
inline double net_reproduction(const VitalRates& rates, const SizeGrid& grid,
                               double P) {
  if (P < 0.0) throw ArgumentError("net_reproduction: P must be nonnegative");
  if (!rates.beta.is_separable())
    throw RouteError(
        "net_reproduction: fertility kernel is not separable; use the general "
        "equilibrium solver");
  detail::require_gamma_positive(rates, grid, P, "net_reproduction");

  const std::size_t n = grid.n_cells;
  std::vector<double> mu_over_gamma(n), b1(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double s = grid.midpoints[i];
    mu_over_gamma[i] = rates.mu(s, P) / rates.gamma(s, P);
    b1[i] = rates.beta.beta1()(s, P);
  }
  const auto M = cumulative_integral(mu_over_gamma, grid);
  // inner[k] = int_0^{mid_k} beta1(y,P) exp(M(y) - M(s_k)) dy
  const auto inner = detail::survival_weighted_prefix(b1, M, grid);

  double R = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = grid.midpoints[i];
    R += grid.weights[i] * rates.beta.beta2(s) / rates.gamma(s, P) * inner[i];
  }
  return R;
}

inline OperatorMatrix assemble_B_P(const VitalRates& rates, const SizeGrid& grid,
                                   double P) {
  if (P < 0.0) throw ArgumentError("assemble_B_P: P must be nonnegative");
  if (grid.n_cells < 8)
    throw ArgumentError("assemble_B_P: need at least 8 cells");
  detail::require_gamma_positive(rates, grid, P, "assemble_B_P");

  const auto n = static_cast<Eigen::Index>(grid.n_cells);
  OperatorMatrix op;
  op.P = P;
  op.entries = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::size_t ui = static_cast<std::size_t>(i);
    const double w = grid.weights[ui];
    // Upwind flux gamma*u through the right edge; zero inflow through the
    // left boundary of the first cell.
    op.entries(i, i) -= rates.gamma(grid.edges[ui + 1], P) / w;
    if (i > 0) op.entries(i, i - 1) += rates.gamma(grid.edges[ui], P) / w;
    op.entries(i, i) -= rates.mu(grid.midpoints[ui], P);
    for (Eigen::Index j = 0; j < n; ++j) {
      const std::size_t uj = static_cast<std::size_t>(j);
      op.entries(i, j) +=
          rates.beta(grid.midpoints[ui], grid.midpoints[uj], P) * grid.weights[uj];
    }
  }
  return op;
}

/// Dominant eigenvalue of the stationary operator at frozen P, with its
/// positive eigenvector rescaled to unit integral. The operator is Metzler
/// for nonnegative fertility, so the dominant eigenvalue must be real; a
/// complex one is reported as a spectral anomaly.
struct DominantPair {
  double lambda = 0.0;
  std::vector<double> eigenvector;  // unit integral
};

inline DominantPair dominant_eigenvalue(const VitalRates& rates,
                                        const SizeGrid& grid, double P) {
  const auto op = assemble_B_P(rates, grid, P);
  const auto spec = dense_eigen(op.entries);
  const auto dom = spec.dominant();
  if (std::fabs(dom.imag()) > 1e-8)
    throw SpectralAnomalyError(
        "dominant_eigenvalue: dominant eigenvalue has imaginary part " +
        std::to_string(dom.imag()) + "; spectrum head: " +
        detail::spectrum_head(spec));

  DominantPair out;
  out.lambda = dom.real();
  std::vector<double> v(grid.n_cells);
  for (std::size_t i = 0; i < grid.n_cells; ++i)
    v[i] = spec.dominant_vector[i].real();
  double total = integrate(v, grid);
  if (total < 0.0) {
    for (auto& x : v) x = -x;
    total = -total;
  }
  if (total <= 0.0)
    throw SpectralAnomalyError(
        "dominant_eigenvalue: dominant eigenvector has zero integral");
  double vmax = 0.0;
  for (double x : v) vmax = std::fmax(vmax, std::fabs(x));
  for (double x : v)
    if (x < -1e-9 * vmax)
      throw SpectralAnomalyError(
          "dominant_eigenvalue: dominant eigenvector is not entrywise "
          "nonnegative; spectrum head: " +
          detail::spectrum_head(spec));
  for (auto& x : v) x = std::fmax(x, 0.0) / total;
  out.eigenvector = std::move(v);
  return out;
}

/// Stationary profile for a prescribed total population: the closed-form
/// construction p(s) = Pbar F(s) int_0^s beta1 / (F gamma) dy, normalized
/// so integrate(p) = P_star. It solves the stationary equation exactly
/// (up to quadrature) when the net reproduction function equals one at
/// P_star; the stationary-residual diagnostic reports the mismatch
/// otherwise.
inline EquilibriumSolution separable_profile_at(const VitalRates& rates,
                                                const SizeGrid& grid,
                                                double P_star) {
  if (!rates.beta.is_separable())
    throw RouteError("separable_profile_at: fertility kernel is not separable");
  if (!(P_star > 0.0))
    throw ArgumentError("separable_profile_at: P_star must be positive");
  detail::require_gamma_positive(rates, grid, P_star, "separable_profile_at");
  const std::size_t n = grid.n_cells;

  std::vector<double> hazard(n), d(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double s = grid.midpoints[i];
    const double g = rates.gamma(s, P_star);
    hazard[i] = (rates.gamma.ds(s, P_star) + rates.mu(s, P_star)) / g;
    d[i] = rates.beta.beta1()(s, P_star) / g;
  }
  const auto W = cumulative_integral(hazard, grid);  // W = -log F
  // shape[i] = F(s_i) int_0^{s_i} beta1/(F gamma) = sum w_j d_j e^{W_j - W_i}
  const auto shape = detail::survival_weighted_prefix(d, W, grid);
  const double mass = integrate(shape, grid);
  if (!(mass > 0.0))
    throw ModelError("separable_profile_at: the stationary profile vanishes");

  EquilibriumSolution eq;
  eq.route = EquilibriumSolution::Route::separable;
  eq.P_star = P_star;
  eq.P_bar_star = P_star / mass;
  eq.p_star.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    eq.p_star[i] = std::fmax(*eq.P_bar_star * shape[i], 0.0);
  eq.residual_total = std::fabs(integrate(eq.p_star, grid) - P_star);
  eq.residual_stationary = detail::stationary_residual_l1(
      assemble_B_P(rates, grid, P_star).entries, eq.p_star, grid);
  return eq;
}

/// Closed-form separable route: finds every root of R(P) = 1 in P_range
/// and builds the normalized stationary profile at each root. Roots are
/// returned in ascending P; an empty list means no sign change was found.
inline std::vector<EquilibriumSolution> solve_equilibrium_separable(
    const VitalRates& rates, const SizeGrid& grid,
    std::pair<double, double> P_range, std::size_t scan_samples = 128) {
  if (!rates.beta.is_separable())
    throw RouteError(
        "solve_equilibrium_separable: fertility kernel is not separable");
  if (!(P_range.first > 0.0) || !(P_range.first < P_range.second))
    throw ArgumentError("solve_equilibrium_separable: need 0 < lo < hi");

  auto objective = [&](double P) { return net_reproduction(rates, grid, P) - 1.0; };
  const auto brackets =
      scan_sign_changes(objective, P_range.first, P_range.second, scan_samples);

  std::vector<EquilibriumSolution> out;
  for (const auto& br : brackets) {
    const double flo = objective(br.lo), fhi = objective(br.hi);
    double P_star;
    if (flo == 0.0)
      P_star = br.lo;
    else if (fhi == 0.0)
      P_star = br.hi;
    else if (flo * fhi < 0.0)
      P_star = bracketed_root(objective, br.lo, br.hi, 1e-12);
    else
      continue;  // grazing bracket from an exact sample zero
    out.push_back(separable_profile_at(rates, grid, P_star));
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.P_star < b.P_star; });
  return out;
}

/// General route: locates sign changes of the dominant eigenvalue of the
/// stationary operator as a function of P and resolves each root; the
/// equilibrium profile is the dominant eigenvector rescaled so that its
/// integral equals P.
inline std::vector<EquilibriumSolution> solve_equilibrium_general(
    const VitalRates& rates, const SizeGrid& grid,
    std::pair<double, double> P_range, std::size_t scan_samples = 64) {
  if (!(P_range.first > 0.0) || !(P_range.first < P_range.second))
    throw ArgumentError("solve_equilibrium_general: need 0 < lo < hi");

  auto lambda_of_P = [&](double P) {
    return detail::dominant_eigenvalue_only(assemble_B_P(rates, grid, P).entries);
  };
  const auto brackets =
      scan_sign_changes(lambda_of_P, P_range.first, P_range.second, scan_samples);

  std::vector<EquilibriumSolution> out;
  for (const auto& br : brackets) {
    const double flo = lambda_of_P(br.lo), fhi = lambda_of_P(br.hi);
    double P_star;
    if (flo == 0.0)
      P_star = br.lo;
    else if (fhi == 0.0)
      P_star = br.hi;
    else if (flo * fhi < 0.0)
      P_star = bracketed_root(lambda_of_P, br.lo, br.hi, 1e-9);
    else
      continue;
    const auto dom = dominant_eigenvalue(rates, grid, P_star);

    EquilibriumSolution eq;
    eq.route = EquilibriumSolution::Route::general;
    eq.P_star = P_star;
    eq.p_star.resize(grid.n_cells);
    for (std::size_t i = 0; i < grid.n_cells; ++i)
      eq.p_star[i] = P_star * dom.eigenvector[i];  // eigenvector has unit integral
    eq.residual_total = std::fabs(integrate(eq.p_star, grid) - P_star);
    eq.residual_stationary = detail::stationary_residual_l1(
        assemble_B_P(rates, grid, P_star).entries, eq.p_star, grid);
    out.push_back(std::move(eq));
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.P_star < b.P_star; });
  return out;
}

/// Density derivative reconstructed from the stationary equation,
///   p' = (int beta(s,y,P) p(y) dy - (gamma_s + mu) p) / gamma,
/// which avoids amplifying grid noise compared to differencing p itself.
inline std::vector<double> stationary_density_derivative(
    const VitalRates& rates, const EquilibriumSolution& eq, const SizeGrid& grid) {
  const std::size_t n = grid.n_cells;
  if (eq.p_star.size() != n)
    throw ArgumentError("stationary_density_derivative: grid mismatch");
  const double P = eq.P_star;
  std::vector<double> dp(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double s = grid.midpoints[i];
    double birth = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      birth += rates.beta(s, grid.midpoints[j], P) * eq.p_star[j] * grid.weights[j];
    dp[i] = (birth - (rates.gamma.ds(s, P) + rates.mu(s, P)) * eq.p_star[i]) /
            rates.gamma(s, P);
  }
  return dp;
}

/// Comparison kernels and probe populations for the equilibrium-existence
/// hypotheses.
struct ComparisonKernels {
  FertilityKernel lower;  // separable
  FertilityKernel upper;  // separable
  double P_minus = 0.0;
  double P_plus = 0.0;
};

struct ConditionsReport {
  bool beta_exceeds_mu_at_zero = false;
  double beta_minus_mu_min = 0.0;

  double survival_integral = 0.0;  // int_0^m exp(-int_0^s mu(,0)/gamma(,0)) ds
  bool survival_integral_below_m_minus_1 = false;

  std::vector<std::pair<double, double>> beta1_mass;  // (P, int beta1(s,P) ds)
  bool beta1_mass_decays = false;

  bool has_comparison = false;
  bool lower_dominated = false;   // beta_lower <= beta at P_minus
  bool upper_dominates = false;   // beta <= beta_upper at P_plus
  double lower_threshold = 0.0;   // reproduction integral of the lower kernel
  double upper_threshold = 0.0;   // reproduction integral of the upper kernel
  bool lower_threshold_above_1 = false;
  bool upper_threshold_below_1 = false;
};

namespace detail {

/// Reproduction-type integral for an arbitrary separable kernel at fixed P:
///   int_0^m b2(s) F(s) int_0^s b1(y) / (gamma(y) F(y)) dy ds
/// with F the survival factor of the ambient rates. Equals the net
/// reproduction function when the kernel is the model's own fertility.
inline double reproduction_integral(const VitalRates& rates,
                                    const FertilityKernel& kernel,
                                    const SizeGrid& grid, double P) {
  if (!kernel.is_separable())
    throw RouteError("reproduction_integral: comparison kernel must be separable");
  require_gamma_positive(rates, grid, P, "reproduction_integral");
  const std::size_t n = grid.n_cells;
  std::vector<double> hazard(n), d(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double y = grid.midpoints[i];
    const double g = rates.gamma(y, P);
    hazard[i] = (rates.gamma.ds(y, P) + rates.mu(y, P)) / g;
    d[i] = kernel.beta1()(y, P) / g;
  }
  const auto W = cumulative_integral(hazard, grid);
  const auto Q = survival_weighted_prefix(d, W, grid);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    acc += grid.weights[i] * kernel.beta2(grid.midpoints[i]) * Q[i];
  return acc;
}

}  // namespace detail

/// Numeric evaluation of the equilibrium-existence hypotheses: the sign
/// comparison beta(s,y,0) > mu(s,0), the survival-integral inequality, the
/// decay of the fertility mass for large P, and (when comparison kernels
/// are supplied) the pointwise domination and threshold integrals of the
/// lower/upper separable bounds.
inline ConditionsReport check_existence_conditions(
    const VitalRates& rates, const SizeGrid& grid,
    const std::optional<ComparisonKernels>& comparison = std::nullopt,
    double P_max = kDefaultPMax) {
  ConditionsReport report;
  const double m = rates.m;

  // beta(s,y,0) > mu(s,0) on a lattice.
  double worst = std::numeric_limits<double>::infinity();
  const int nl = 30;
  for (int i = 0; i < nl; ++i) {
    const double s = m * (i + 0.5) / nl;
    for (int j = 0; j < nl; ++j) {
      const double y = m * (j + 0.5) / nl;
      worst = std::fmin(worst, rates.beta(s, y, 0.0) - rates.mu(s, 0.0));
    }
  }
  report.beta_minus_mu_min = worst;
  report.beta_exceeds_mu_at_zero = worst > 0.0;

  // Survival integral at P = 0, compared literally against m - 1.
  {
    std::vector<double> integrand(grid.n_cells);
    for (std::size_t i = 0; i < grid.n_cells; ++i) {
      const double s = grid.midpoints[i];
      integrand[i] = rates.mu(s, 0.0) / rates.gamma(s, 0.0);
    }
    const auto M = cumulative_integral(integrand, grid);
    std::vector<double> surv(grid.n_cells);
    for (std::size_t i = 0; i < grid.n_cells; ++i) surv[i] = std::exp(-M[i]);
    report.survival_integral = integrate(surv, grid);
    report.survival_integral_below_m_minus_1 = report.survival_integral < m - 1.0;
  }

  // Fertility mass decay in P (separable models).
  if (rates.beta.is_separable()) {
    for (double P : {1.0, 0.5 * P_max, P_max}) {
      std::vector<double> b1(grid.n_cells);
      for (std::size_t i = 0; i < grid.n_cells; ++i)
        b1[i] = rates.beta.beta1()(grid.midpoints[i], P);
      report.beta1_mass.emplace_back(P, integrate(b1, grid));
    }
    const double first = report.beta1_mass.front().second;
    const double last = report.beta1_mass.back().second;
    report.beta1_mass_decays = last < 0.1 * std::fmax(first, 1e-300);
  }

  if (comparison) {
    report.has_comparison = true;
    bool lower_ok = true, upper_ok = true;
    for (int i = 0; i < nl; ++i) {
      const double s = m * (i + 0.5) / nl;
      for (int j = 0; j < nl; ++j) {
        const double y = m * (j + 0.5) / nl;
        if (comparison->lower(s, y, comparison->P_minus) >
            rates.beta(s, y, comparison->P_minus) + 1e-12)
          lower_ok = false;
        if (rates.beta(s, y, comparison->P_plus) >
            comparison->upper(s, y, comparison->P_plus) + 1e-12)
          upper_ok = false;
      }
    }
    report.lower_dominated = lower_ok;
    report.upper_dominates = upper_ok;
    report.lower_threshold = detail::reproduction_integral(
        rates, comparison->lower, grid, comparison->P_minus);
    report.upper_threshold = detail::reproduction_integral(
        rates, comparison->upper, grid, comparison->P_plus);
    report.lower_threshold_above_1 = report.lower_threshold > 1.0;
    report.upper_threshold_below_1 = report.upper_threshold < 1.0;
  }
  return report;
}

}  // namespace structpop
