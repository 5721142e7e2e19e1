#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "structpop/errors.hpp"

namespace structpop {

/// Finite-volume discretization of the size interval [0, m]: cell edges,
/// cell midpoints and midpoint-rule quadrature weights. The same geometry
/// backs quadrature, transport stencils and operator assembly, so every
/// discrete integral in the library is a weighted sum over midpoints.
struct SizeGrid {
  double m = 0.0;
  std::size_t n_cells = 0;
  std::vector<double> edges;      // n_cells + 1, ascending, edges[0]=0, edges[n]=m
  std::vector<double> midpoints;  // n_cells
  std::vector<double> weights;    // n_cells, positive, sums to m

  /// Uniform grid with n_cells cells on [0, m].
  static SizeGrid uniform(double m, std::size_t n_cells) {
    if (!(m > 0.0) || !std::isfinite(m))
      throw ArgumentError("SizeGrid: maximal size m must be positive and finite");
    if (n_cells == 0) throw ArgumentError("SizeGrid: n_cells must be positive");
    SizeGrid g;
    g.m = m;
    g.n_cells = n_cells;
    g.edges.resize(n_cells + 1);
    g.midpoints.resize(n_cells);
    g.weights.resize(n_cells);
    const double h = m / static_cast<double>(n_cells);
    for (std::size_t i = 0; i <= n_cells; ++i)
      g.edges[i] = h * static_cast<double>(i);
    g.edges[n_cells] = m;  // exact right endpoint
    for (std::size_t i = 0; i < n_cells; ++i) {
      g.midpoints[i] = 0.5 * (g.edges[i] + g.edges[i + 1]);
      g.weights[i] = g.edges[i + 1] - g.edges[i];
    }
    return g;
  }

  double spacing() const { return m / static_cast<double>(n_cells); }
};

/// Closed axis-aligned rectangle in the complex plane, used as a search
/// region for characteristic roots.
struct Rectangle {
  double re_lo, re_hi, im_lo, im_hi;

  Rectangle(double re_lo_, double re_hi_, double im_lo_, double im_hi_)
      : re_lo(re_lo_), re_hi(re_hi_), im_lo(im_lo_), im_hi(im_hi_) {
    if (!(re_lo < re_hi) || !(im_lo < im_hi))
      throw ArgumentError("Rectangle: need re_lo < re_hi and im_lo < im_hi");
  }

  double width() const { return re_hi - re_lo; }
  double height() const { return im_hi - im_lo; }

  bool contains(double re, double im, double pad = 0.0) const {
    return re >= re_lo - pad && re <= re_hi + pad && im >= im_lo - pad &&
           im <= im_hi + pad;
  }
};

namespace detail {
inline void require_grid_length(std::size_t got, const SizeGrid& grid,
                                const char* who) {
  if (got != grid.n_cells)
    throw ArgumentError(std::string(who) + ": expected " +
                        std::to_string(grid.n_cells) + " midpoint values, got " +
                        std::to_string(got));
}
}  // namespace detail

/// Midpoint-rule quadrature of a function sampled on grid midpoints:
/// sum of weights[i] * values[i]. Exact for piecewise-constant integrands.
inline double integrate(const std::vector<double>& values, const SizeGrid& grid) {
  detail::require_grid_length(values.size(), grid, "integrate");
  double acc = 0.0;
  for (std::size_t i = 0; i < grid.n_cells; ++i) {
    if (!std::isfinite(values[i]))
      throw ArgumentError("integrate: non-finite value at cell " + std::to_string(i));
    acc += grid.weights[i] * values[i];
  }
  return acc;
}

/// Running integral evaluated at the midpoints: I[k] approximates the
/// integral of the sampled function from 0 to midpoints[k]. Cells left of
/// k contribute fully, cell k contributes half its weight, which makes the
/// result exact for constants.
inline std::vector<double> cumulative_integral(const std::vector<double>& values,
                                               const SizeGrid& grid) {
  detail::require_grid_length(values.size(), grid, "cumulative_integral");
  std::vector<double> out(grid.n_cells);
  double acc = 0.0;
  for (std::size_t i = 0; i < grid.n_cells; ++i) {
    if (!std::isfinite(values[i]))
      throw ArgumentError("cumulative_integral: non-finite value at cell " +
                          std::to_string(i));
    out[i] = acc + 0.5 * grid.weights[i] * values[i];
    acc += grid.weights[i] * values[i];
  }
  return out;
}

}  // namespace structpop
