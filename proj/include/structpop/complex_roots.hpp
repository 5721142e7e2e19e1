#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "structpop/errors.hpp"
#include "structpop/grid.hpp"

namespace structpop {

using Complex = std::complex<double>;
using ComplexFn = std::function<Complex(Complex)>;

namespace detail {

// Boundary of a rectangle, counterclockwise, n points per side.
inline std::vector<Complex> rectangle_boundary(const Rectangle& rect,
                                               std::size_t per_side) {
  std::vector<Complex> pts;
  pts.reserve(4 * per_side);
  const double dx = rect.width() / static_cast<double>(per_side);
  const double dy = rect.height() / static_cast<double>(per_side);
  for (std::size_t i = 0; i < per_side; ++i)
    pts.emplace_back(rect.re_lo + dx * static_cast<double>(i), rect.im_lo);
  for (std::size_t i = 0; i < per_side; ++i)
    pts.emplace_back(rect.re_hi, rect.im_lo + dy * static_cast<double>(i));
  for (std::size_t i = 0; i < per_side; ++i)
    pts.emplace_back(rect.re_hi - dx * static_cast<double>(i), rect.im_hi);
  for (std::size_t i = 0; i < per_side; ++i)
    pts.emplace_back(rect.re_lo, rect.im_hi - dy * static_cast<double>(i));
  return pts;
}

}  // namespace detail

/// Number of zeros of an analytic F inside a rectangle, by the argument
/// principle: total change of arg F along the boundary divided by 2*pi.
/// Boundary segments whose phase increment reaches pi/2 are bisected until
/// every increment is below pi/2, so no winding can be missed between
/// samples. Throws BoundaryZeroError when |F| drops below 1e-9 on the
/// contour, and ConvergenceError when refinement cannot resolve the phase
/// (a zero essentially on the contour but above the floor).
inline int winding_count(const ComplexFn& F, const Rectangle& rect,
                         std::size_t n_boundary_samples = 256) {
  constexpr double kBoundaryFloor = 1e-9;
  constexpr double kHalfPi = 0.5 * 3.14159265358979323846;
  constexpr int kMaxDepth = 26;

  auto eval = [&](const Complex& z) {
    const Complex v = F(z);
    if (!std::isfinite(v.real()) || !std::isfinite(v.imag()))
      throw EvaluationError("winding_count: non-finite F on boundary near (" +
                            std::to_string(z.real()) + ", " +
                            std::to_string(z.imag()) + ")");
    if (std::abs(v) < kBoundaryFloor)
      throw BoundaryZeroError(
          "winding_count: |F| = " + std::to_string(std::abs(v)) +
          " on the boundary near (" + std::to_string(z.real()) + ", " +
          std::to_string(z.imag()) + "); perturb the rectangle");
    return v;
  };

  const std::size_t per_side = n_boundary_samples == 0 ? 256 : n_boundary_samples;
  const auto pts = detail::rectangle_boundary(rect, per_side);
  std::vector<Complex> vals(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) vals[i] = eval(pts[i]);

  double total = 0.0;
  std::size_t budget = 1u << 20;
  struct Segment {
    Complex z0, z1, f0, f1;
    int depth;
  };
  std::vector<Segment> stack;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const std::size_t j = (i + 1) % pts.size();
    stack.push_back({pts[i], pts[j], vals[i], vals[j], 0});
    while (!stack.empty()) {
      const Segment seg = stack.back();
      stack.pop_back();
      const double inc = std::arg(seg.f1 / seg.f0);
      if (std::fabs(inc) < kHalfPi) {
        total += inc;
        continue;
      }
      if (seg.depth >= kMaxDepth || budget == 0)
        throw ConvergenceError(
            "winding_count: cannot resolve the phase change near (" +
            std::to_string(seg.z0.real()) + ", " + std::to_string(seg.z0.imag()) +
            "); a zero sits too close to the boundary");
      --budget;
      const Complex zm = 0.5 * (seg.z0 + seg.z1);
      const Complex fm = eval(zm);
      stack.push_back({zm, seg.z1, fm, seg.f1, seg.depth + 1});
      stack.push_back({seg.z0, zm, seg.f0, fm, seg.depth + 1});
    }
  }
  return static_cast<int>(std::lround(total / (2.0 * 3.14159265358979323846)));
}

/// Newton refinement of an isolated simple zero near z0, with a centrally
/// differenced derivative (step 1e-7 * max(1, |z|)). Returns z with
/// |F(z)| < tol.
inline Complex refine_complex_root(const ComplexFn& F, Complex z0, double tol,
                                   double divergence_radius = 0.0) {
  if (!(tol > 0.0)) throw ArgumentError("refine_complex_root: tol must be positive");
  Complex z = z0;
  const int max_iter = 100;
  for (int iter = 0; iter < max_iter; ++iter) {
    if (divergence_radius > 0.0 && std::abs(z - z0) > divergence_radius)
      throw ConvergenceError("refine_complex_root: iterate left the trust region");
    const Complex fz = F(z);
    if (!std::isfinite(fz.real()) || !std::isfinite(fz.imag()))
      throw EvaluationError("refine_complex_root: non-finite F");
    if (std::abs(fz) < tol) return z;
    const double step = 1e-7 * std::fmax(1.0, std::abs(z));
    const Complex h(step, 0.0);
    const Complex dfz = (F(z + h) - F(z - h)) / (2.0 * h);
    if (std::abs(dfz) == 0.0)
      throw ConvergenceError("refine_complex_root: vanishing derivative");
    z -= fz / dfz;
  }
  throw ConvergenceError("refine_complex_root: no convergence in 100 iterations");
}

}  // namespace structpop
