#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "structpop/errors.hpp"

namespace structpop {

using RealFn = std::function<double(double)>;

/// Interval [lo, hi] on which a scanned function changes sign.
struct RootBracket {
  double lo;
  double hi;
};

/// Brent-style bracketed root finder: bisection with inverse-quadratic /
/// secant acceleration. Deterministic; returns x with bracket width <= tol.
inline double bracketed_root(const RealFn& f, double lo, double hi, double tol) {
  if (!(tol > 0.0)) throw ArgumentError("bracketed_root: tol must be positive");
  if (!(lo < hi)) throw ArgumentError("bracketed_root: need lo < hi");
  double a = lo, b = hi;
  double fa = f(a), fb = f(b);
  if (!std::isfinite(fa) || !std::isfinite(fb))
    throw EvaluationError("bracketed_root: non-finite endpoint value");
  if (fa == 0.0) return a;
  if (fb == 0.0) return b;
  if (fa * fb > 0.0)
    throw BracketError("bracketed_root: f(" + std::to_string(lo) + ") and f(" +
                       std::to_string(hi) + ") have the same sign");

  // Classic Brent bookkeeping: b is the best iterate, a the previous one,
  // c the last iterate with f(c) of opposite sign to f(b).
  double c = a, fc = fa;
  double d = b - a, e = d;
  const int max_iter = 200;
  for (int iter = 0; iter < max_iter; ++iter) {
    if (std::fabs(fc) < std::fabs(fb)) {
      a = b; b = c; c = a;
      fa = fb; fb = fc; fc = fa;
    }
    const double tol1 = 2.0 * 1e-16 * std::fabs(b) + 0.5 * tol;
    const double xm = 0.5 * (c - b);
    if (std::fabs(xm) <= tol1 || fb == 0.0) return b;
    if (std::fabs(e) >= tol1 && std::fabs(fa) > std::fabs(fb)) {
      // Attempt interpolation.
      const double s = fb / fa;
      double p, q;
      if (a == c) {
        p = 2.0 * xm * s;
        q = 1.0 - s;
      } else {
        const double qq = fa / fc;
        const double r = fb / fc;
        p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
        q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
      }
      if (p > 0.0) q = -q;
      p = std::fabs(p);
      if (2.0 * p < std::fmin(3.0 * xm * q - std::fabs(tol1 * q),
                              std::fabs(e * q))) {
        e = d;
        d = p / q;
      } else {
        d = xm;
        e = d;
      }
    } else {
      d = xm;
      e = d;
    }
    a = b;
    fa = fb;
    b += (std::fabs(d) > tol1) ? d : (xm > 0.0 ? tol1 : -tol1);
    fb = f(b);
    if (!std::isfinite(fb))
      throw EvaluationError("bracketed_root: non-finite value at x = " +
                            std::to_string(b));
    if ((fb > 0.0) == (fc > 0.0)) {
      c = a;
      fc = fa;
      d = b - a;
      e = d;
    }
  }
  throw ConvergenceError("bracketed_root: no convergence in 200 iterations");
}

/// Samples f on n_samples points of [lo, hi] and returns every adjacent
/// pair with a sign change, in order. Sampling is geometric when lo > 0
/// (scan ranges often span orders of magnitude), uniform otherwise.
/// An exact zero at a sample point yields a single bracket straddling it.
inline std::vector<RootBracket> scan_sign_changes(const RealFn& f, double lo,
                                                  double hi,
                                                  std::size_t n_samples) {
  if (!(lo < hi)) throw ArgumentError("scan_sign_changes: need lo < hi");
  if (n_samples < 2) throw ArgumentError("scan_sign_changes: need n_samples >= 2");

  std::vector<double> xs(n_samples);
  if (lo > 0.0) {
    const double r = std::log(hi / lo) / static_cast<double>(n_samples - 1);
    for (std::size_t i = 0; i < n_samples; ++i)
      xs[i] = lo * std::exp(r * static_cast<double>(i));
    xs.back() = hi;
  } else {
    const double h = (hi - lo) / static_cast<double>(n_samples - 1);
    for (std::size_t i = 0; i < n_samples; ++i)
      xs[i] = lo + h * static_cast<double>(i);
    xs.back() = hi;
  }

  std::vector<double> fs(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    fs[i] = f(xs[i]);
    if (!std::isfinite(fs[i]))
      throw EvaluationError("scan_sign_changes: non-finite value at x = " +
                            std::to_string(xs[i]));
  }

  std::vector<RootBracket> out;
  for (std::size_t i = 0; i < n_samples; ++i) {
    if (fs[i] == 0.0) {
      // Zero exactly on a sample: one bracket around it, skipping the
      // adjacent-pair tests that would double-report it.
      const bool prev_zero = i > 0 && fs[i - 1] == 0.0;
      if (!prev_zero) {
        const std::size_t a = i > 0 ? i - 1 : i;
        const std::size_t b = i + 1 < n_samples ? i + 1 : i;
        out.push_back({xs[a], xs[b]});
      }
      continue;
    }
    if (i + 1 < n_samples && fs[i + 1] != 0.0 && fs[i] * fs[i + 1] < 0.0)
      out.push_back({xs[i], xs[i + 1]});
  }
  return out;
}

}  // namespace structpop
