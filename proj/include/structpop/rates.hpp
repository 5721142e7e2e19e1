#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "structpop/errors.hpp"
#include "structpop/grid.hpp"

namespace structpop {

/// Growth rates this far below zero (or below this floor) make the
/// transport term meaningless; operations reject such models.
constexpr double kGammaFloor = 1e-12;

/// Default upper end of the population-size box on which rates are
/// evaluated and validated.
constexpr double kDefaultPMax = 100.0;

using Surface2Fn = std::function<double(double, double)>;

/// A vital-rate surface v(s, P) from a closed registry of analytic
/// families, carrying hand-coded partial derivatives v_s, v_P and the
/// mixed derivative v_sP. The linearization needs these derivatives
/// exactly where the model assumes C^1 smoothness, so arbitrary user
/// expressions are not accepted; compose registered families instead.
class RateSurface {
public:
  RateSurface() = default;
  RateSurface(std::string family, std::map<std::string, double> params,
              Surface2Fn v, Surface2Fn vs, Surface2Fn vp, Surface2Fn vsp)
      : family_(std::move(family)),
        params_(std::move(params)),
        v_(std::move(v)),
        vs_(std::move(vs)),
        vp_(std::move(vp)),
        vsp_(std::move(vsp)) {}

  double operator()(double s, double P) const { return v_(s, P); }
  double ds(double s, double P) const { return vs_(s, P); }
  double dP(double s, double P) const { return vp_(s, P); }
  double dsdP(double s, double P) const { return vsp_(s, P); }

  const std::string& family() const { return family_; }
  const std::map<std::string, double>& params() const { return params_; }
  bool valid() const { return static_cast<bool>(v_); }

private:
  std::string family_;
  std::map<std::string, double> params_;
  Surface2Fn v_, vs_, vp_, vsp_;
};

namespace detail {

inline double require_param(const std::map<std::string, double>& params,
                            const std::string& family, const std::string& key) {
  auto it = params.find(key);
  if (it == params.end())
    throw ConfigError("rate family '" + family + "' is missing parameter '" +
                      key + "'");
  if (!std::isfinite(it->second))
    throw ConfigError("rate family '" + family + "' has non-finite parameter '" +
                      key + "'");
  return it->second;
}

}  // namespace detail

/// Registered families and their formulas:
///   constant     v = c
///   affine_s     v = c0 + c1*s
///   affine_P     v = c0 + c1*P
///   exp_decay_P  v = a * exp(-k*P)
///   logistic_P   v = a / (1 + exp(k*(P - P0)))
///   gaussian_s   v = a * exp(-(s - s0)^2 / (2*sigma^2))
///   product      v = u * w for two registered factor surfaces
inline std::vector<std::pair<std::string, std::string>> registered_families() {
  return {
      {"constant", "v(s,P) = c"},
      {"affine_s", "v(s,P) = c0 + c1*s"},
      {"affine_P", "v(s,P) = c0 + c1*P"},
      {"exp_decay_P", "v(s,P) = a*exp(-k*P)"},
      {"logistic_P", "v(s,P) = a / (1 + exp(k*(P - P0)))"},
      {"gaussian_s", "v(s,P) = a*exp(-(s - s0)^2 / (2*sigma^2))"},
      {"product", "v(s,P) = factor1(s,P) * factor2(s,P)"},
  };
}

/// Product of two surfaces, with derivatives by the product rule.
inline RateSurface make_product_surface(const RateSurface& u, const RateSurface& w);

/// Builds a surface from the registry. Unknown family or a missing/broken
/// parameter raises ConfigError naming the offending field.
inline RateSurface make_rate_surface(const std::string& family,
                                     const std::map<std::string, double>& params) {
  using detail::require_param;
  if (family == "constant") {
    const double c = require_param(params, family, "c");
    return RateSurface(family, params, [c](double, double) { return c; },
                       [](double, double) { return 0.0; },
                       [](double, double) { return 0.0; },
                       [](double, double) { return 0.0; });
  }
  if (family == "affine_s") {
    const double c0 = require_param(params, family, "c0");
    const double c1 = require_param(params, family, "c1");
    return RateSurface(family, params,
                       [c0, c1](double s, double) { return c0 + c1 * s; },
                       [c1](double, double) { return c1; },
                       [](double, double) { return 0.0; },
                       [](double, double) { return 0.0; });
  }
  if (family == "affine_P") {
    const double c0 = require_param(params, family, "c0");
    const double c1 = require_param(params, family, "c1");
    return RateSurface(family, params,
                       [c0, c1](double, double P) { return c0 + c1 * P; },
                       [](double, double) { return 0.0; },
                       [c1](double, double) { return c1; },
                       [](double, double) { return 0.0; });
  }
  if (family == "exp_decay_P") {
    const double a = require_param(params, family, "a");
    const double k = require_param(params, family, "k");
    return RateSurface(family, params,
                       [a, k](double, double P) { return a * std::exp(-k * P); },
                       [](double, double) { return 0.0; },
                       [a, k](double, double P) { return -k * a * std::exp(-k * P); },
                       [](double, double) { return 0.0; });
  }
  if (family == "logistic_P") {
    const double a = require_param(params, family, "a");
    const double k = require_param(params, family, "k");
    const double P0 = require_param(params, family, "P0");
    auto value = [a, k, P0](double, double P) {
      return a / (1.0 + std::exp(k * (P - P0)));
    };
    auto dP = [a, k, P0](double, double P) {
      const double e = std::exp(k * (P - P0));
      const double den = 1.0 + e;
      return -a * k * e / (den * den);
    };
    return RateSurface(family, params, value, [](double, double) { return 0.0; },
                       dP, [](double, double) { return 0.0; });
  }
  if (family == "gaussian_s") {
    const double a = require_param(params, family, "a");
    const double s0 = require_param(params, family, "s0");
    const double sigma = require_param(params, family, "sigma");
    if (sigma == 0.0)
      throw ConfigError("rate family 'gaussian_s' needs sigma != 0");
    auto value = [a, s0, sigma](double s, double) {
      const double z = (s - s0) / sigma;
      return a * std::exp(-0.5 * z * z);
    };
    auto ds = [a, s0, sigma](double s, double) {
      const double z = (s - s0) / sigma;
      return -a * std::exp(-0.5 * z * z) * z / sigma;
    };
    return RateSurface(family, params, value, ds,
                       [](double, double) { return 0.0; },
                       [](double, double) { return 0.0; });
  }
  if (family == "product")
    throw ConfigError(
        "rate family 'product' must be built via make_product_surface (or the "
        "'factors' config key), not from scalar parameters");
  throw ConfigError("unknown rate family '" + family + "'");
}

inline RateSurface make_product_surface(const RateSurface& u, const RateSurface& w) {
  if (!u.valid() || !w.valid())
    throw ConfigError("product surface needs two valid factors");
  auto value = [u, w](double s, double P) { return u(s, P) * w(s, P); };
  auto ds = [u, w](double s, double P) {
    return u.ds(s, P) * w(s, P) + u(s, P) * w.ds(s, P);
  };
  auto dP = [u, w](double s, double P) {
    return u.dP(s, P) * w(s, P) + u(s, P) * w.dP(s, P);
  };
  auto dsdP = [u, w](double s, double P) {
    return u.dsdP(s, P) * w(s, P) + u.ds(s, P) * w.dP(s, P) +
           u.dP(s, P) * w.ds(s, P) + u(s, P) * w.dsdP(s, P);
  };
  return RateSurface("product", {}, value, ds, dP, dsdP);
}

/// Fertility kernel b(s, y, P): the rate at which individuals of size y
/// produce offspring of size s at population size P. The separable kind
/// stores b = beta1(s,P) * beta2(y); the general kind stores a sum of
/// such terms (rank-k kernels), which is what the configuration format
/// can express, or arbitrary evaluators when constructed in code.
class FertilityKernel {
public:
  enum class Kind { separable, general };

  using Kernel3Fn = std::function<double(double, double, double)>;

  FertilityKernel() = default;

  static FertilityKernel separable(RateSurface beta1, RateSurface beta2) {
    FertilityKernel k;
    k.kind_ = Kind::separable;
    k.beta1_ = std::move(beta1);
    k.beta2_ = std::move(beta2);
    return k;
  }

  static FertilityKernel general(Kernel3Fn b, Kernel3Fn b_P) {
    FertilityKernel k;
    k.kind_ = Kind::general;
    k.b_ = std::move(b);
    k.b_P_ = std::move(b_P);
    return k;
  }

  /// General kernel as a sum of separable terms.
  static FertilityKernel general_sum(std::vector<std::pair<RateSurface, RateSurface>> terms) {
    if (terms.empty()) throw ConfigError("general fertility kernel needs at least one term");
    auto b = [terms](double s, double y, double P) {
      double acc = 0.0;
      for (const auto& t : terms) acc += t.first(s, P) * t.second(y, 0.0);
      return acc;
    };
    auto b_P = [terms](double s, double y, double P) {
      double acc = 0.0;
      for (const auto& t : terms) acc += t.first.dP(s, P) * t.second(y, 0.0);
      return acc;
    };
    return general(b, b_P);
  }

  Kind kind() const { return kind_; }
  bool is_separable() const { return kind_ == Kind::separable; }

  double operator()(double s, double y, double P) const {
    if (kind_ == Kind::separable) return beta1_(s, P) * beta2_(y, 0.0);
    return b_(s, y, P);
  }

  double dP(double s, double y, double P) const {
    if (kind_ == Kind::separable) return beta1_.dP(s, P) * beta2_(y, 0.0);
    return b_P_(s, y, P);
  }

  const RateSurface& beta1() const {
    require_separable("beta1");
    return beta1_;
  }

  /// The offspring-size profile beta2 as a single-variable function.
  double beta2(double y) const {
    require_separable("beta2");
    return beta2_(y, 0.0);
  }

  const RateSurface& beta2_surface() const {
    require_separable("beta2");
    return beta2_;
  }

private:
  void require_separable(const char* what) const {
    if (kind_ != Kind::separable)
      throw RouteError(std::string("fertility kernel is not separable; '") +
                       what + "' is only defined for the separable kind");
  }

  Kind kind_ = Kind::separable;
  RateSurface beta1_, beta2_;
  Kernel3Fn b_, b_P_;
};

/// The model's coefficient triple: growth gamma(s,P), mortality mu(s,P)
/// and fertility b(s,y,P), together with the maximal size m.
struct VitalRates {
  RateSurface gamma;
  RateSurface mu;
  FertilityKernel beta;
  double m = 1.0;
};

/// Builds a fertility kernel and samples it for negativity over
/// [0,m]^2 x [0,P_max]; negative values are a model error.
inline FertilityKernel make_fertility(FertilityKernel kernel, double m,
                                      double P_max = kDefaultPMax) {
  const int ns = 9, nP = 7;
  for (int i = 0; i <= ns; ++i) {
    const double s = m * static_cast<double>(i) / ns;
    for (int j = 0; j <= ns; ++j) {
      const double y = m * static_cast<double>(j) / ns;
      for (int k = 0; k <= nP; ++k) {
        const double P = P_max * static_cast<double>(k) / nP;
        const double v = kernel(s, y, P);
        if (!std::isfinite(v))
          throw ModelError("fertility kernel is non-finite at (s=" +
                           std::to_string(s) + ", y=" + std::to_string(y) +
                           ", P=" + std::to_string(P) + ")");
        if (v < 0.0)
          throw ModelError("fertility kernel is negative at (s=" +
                           std::to_string(s) + ", y=" + std::to_string(y) +
                           ", P=" + std::to_string(P) + ")");
      }
    }
  }
  return kernel;
}

/// One derivative-agreement entry of a validation report.
struct DerivativeCheck {
  std::string surface;   // "gamma", "mu", "beta1", ...
  std::string which;     // "ds", "dP", "dsdP"
  double max_rel_error = 0.0;
  bool passed = true;
};

struct IrreducibilityEntry {
  double P = 0.0;
  double eps = 0.0;
  double integral = 0.0;  // corner mass: newborns near 0 from parents near m
  bool positive = false;
};

/// Findings of validate_rates. Nothing here throws: every observation is
/// an entry, and passed() reports only the mandatory sign conditions.
struct ValidationReport {
  bool gamma_positive = true;
  double gamma_floor_observed = 0.0;
  std::optional<std::pair<double, double>> gamma_fail_point;

  bool mu_nonnegative = true;
  std::optional<std::pair<double, double>> mu_fail_point;

  bool beta_nonnegative = true;

  std::vector<DerivativeCheck> derivative_checks;
  bool derivatives_agree = true;

  std::vector<IrreducibilityEntry> irreducibility;
  bool irreducible = true;

  std::uint64_t seed = 0;

  bool passed() const {
    return gamma_positive && mu_nonnegative && beta_nonnegative;
  }
};

namespace detail {

inline void check_surface_derivatives(const RateSurface& f, const std::string& name,
                                      double m, double P_max, std::mt19937_64& rng,
                                      ValidationReport& report) {
  std::uniform_real_distribution<double> us(0.0, m), uP(0.0, P_max);
  DerivativeCheck cs{name, "ds", 0.0, true};
  DerivativeCheck cP{name, "dP", 0.0, true};
  DerivativeCheck csP{name, "dsdP", 0.0, true};
  for (int i = 0; i < 100; ++i) {
    const double s = us(rng), P = uP(rng);
    const double hs = 1e-6 * std::fmax(1.0, std::fabs(s));
    const double hP = 1e-6 * std::fmax(1.0, std::fabs(P));
    const double fd_s = (f(s + hs, P) - f(s - hs, P)) / (2.0 * hs);
    const double fd_P = (f(s, P + hP) - f(s, P - hP)) / (2.0 * hP);
    const double fd_sP = (f.dP(s + hs, P) - f.dP(s - hs, P)) / (2.0 * hs);
    auto rel = [](double a, double b) {
      const double scale = std::fmax(std::fmax(std::fabs(a), std::fabs(b)), 1.0);
      return std::fabs(a - b) / scale;
    };
    cs.max_rel_error = std::fmax(cs.max_rel_error, rel(f.ds(s, P), fd_s));
    cP.max_rel_error = std::fmax(cP.max_rel_error, rel(f.dP(s, P), fd_P));
    csP.max_rel_error = std::fmax(csP.max_rel_error, rel(f.dsdP(s, P), fd_sP));
  }
  for (auto* c : {&cs, &cP, &csP}) {
    c->passed = c->max_rel_error <= 1e-4;
    report.derivatives_agree = report.derivatives_agree && c->passed;
    report.derivative_checks.push_back(*c);
  }
}

// Midpoint quadrature of the kernel over the corner [0,eps] x [m-eps,m].
inline double corner_recruitment_mass(const FertilityKernel& beta, double m,
                                      double eps, double P) {
  const int n = 24;
  const double h = eps / n;
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const double s = (i + 0.5) * h;
    for (int j = 0; j < n; ++j) {
      const double y = m - eps + (j + 0.5) * h;
      acc += beta(s, y, P) * h * h;
    }
  }
  return acc;
}

}  // namespace detail

/// Checks the structural assumptions on a rate triple: positivity of gamma
/// (with the observed floor), nonnegativity of mu and of the fertility
/// kernel, agreement of the hand-coded derivatives with central finite
/// differences, and the recruitment irreducibility condition: for each
/// probe P and eps in {m/10, m/20, m/40}, whether parents near the maximal
/// size produce a positive mass of offspring near size zero.
///
/// Sampling is a 30x30 lattice plus 100 random points with the given seed,
/// so the report is deterministic for a fixed seed.
inline ValidationReport validate_rates(const VitalRates& rates, const SizeGrid& grid,
                                       const std::vector<double>& P_probe,
                                       std::uint64_t seed = 42,
                                       double P_max = kDefaultPMax) {
  if (P_probe.empty())
    throw ArgumentError("validate_rates: need at least one probe value of P");
  for (double P : P_probe)
    if (!(P > 0.0)) throw ArgumentError("validate_rates: probe P values must be positive");

  ValidationReport report;
  report.seed = seed;
  const double m = rates.m;
  std::mt19937_64 rng(seed);

  // Sign conditions on a lattice plus random points.
  std::vector<std::pair<double, double>> pts;
  for (int i = 0; i < 30; ++i)
    for (int j = 0; j < 30; ++j)
      pts.emplace_back(m * (i + 0.5) / 30.0, P_max * (j + 0.5) / 30.0);
  {
    std::uniform_real_distribution<double> us(0.0, m), uP(0.0, P_max);
    for (int i = 0; i < 100; ++i) pts.emplace_back(us(rng), uP(rng));
  }

  report.gamma_floor_observed = std::numeric_limits<double>::infinity();
  for (const auto& [s, P] : pts) {
    const double g = rates.gamma(s, P);
    report.gamma_floor_observed = std::fmin(report.gamma_floor_observed, g);
    if (!(g > 0.0) && !report.gamma_fail_point) {
      report.gamma_positive = false;
      report.gamma_fail_point = {s, P};
    }
    const double mu = rates.mu(s, P);
    if (mu < 0.0 && !report.mu_fail_point) {
      report.mu_nonnegative = false;
      report.mu_fail_point = {s, P};
    }
  }
  for (const auto& [s, P] : pts) {
    const double y = m - s;  // reuse lattice for the second size argument
    if (rates.beta(s, y, P) < 0.0) {
      report.beta_nonnegative = false;
      break;
    }
  }

  detail::check_surface_derivatives(rates.gamma, "gamma", m, P_max, rng, report);
  detail::check_surface_derivatives(rates.mu, "mu", m, P_max, rng, report);
  if (rates.beta.is_separable())
    detail::check_surface_derivatives(rates.beta.beta1(), "beta1", m, P_max, rng,
                                      report);

  for (double P : P_probe) {
    for (double eps : {m / 10.0, m / 20.0, m / 40.0}) {
      IrreducibilityEntry entry;
      entry.P = P;
      entry.eps = eps;
      entry.integral = detail::corner_recruitment_mass(rates.beta, m, eps, P);
      entry.positive = entry.integral > 0.0;
      report.irreducible = report.irreducible && entry.positive;
      report.irreducibility.push_back(entry);
    }
  }
  (void)grid;
  return report;
}

}  // namespace structpop
