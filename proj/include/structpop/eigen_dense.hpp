#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <complex>
#include <string>
#include <vector>

#include "structpop/errors.hpp"

namespace structpop {

/// Full spectrum of a dense real matrix, plus the right eigenvector of the
/// eigenvalue with largest real part.
struct Spectrum {
  std::vector<std::complex<double>> eigenvalues;  // sorted by descending Re, then Im
  std::vector<std::complex<double>> dominant_vector;  // unit 1-norm

  const std::complex<double>& dominant() const { return eigenvalues.front(); }
};

/// Dense nonsymmetric eigendecomposition (real Schur based). Eigenvalues are
/// returned with multiplicity and sorted by descending real part. The
/// dominant eigenvector is normalized to unit 1-norm and rotated so its
/// largest-modulus entry is real and nonnegative.
inline Spectrum dense_eigen(const Eigen::MatrixXd& A) {
  if (A.rows() == 0 || A.rows() != A.cols())
    throw ArgumentError("dense_eigen: matrix must be square and nonempty");
  if (!A.allFinite())
    throw ArgumentError("dense_eigen: matrix has non-finite entries");

  Eigen::EigenSolver<Eigen::MatrixXd> solver(A, /*computeEigenvectors=*/true);
  if (solver.info() != Eigen::Success)
    throw NumericalError("dense_eigen: QR iteration failed to converge for a " +
                         std::to_string(A.rows()) + "x" +
                         std::to_string(A.cols()) + " matrix");

  const auto values = solver.eigenvalues();
  const auto vectors = solver.eigenvectors();
  const Eigen::Index n = values.size();

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    if (values[a].real() != values[b].real())
      return values[a].real() > values[b].real();
    return values[a].imag() > values[b].imag();
  });

  Spectrum out;
  out.eigenvalues.reserve(static_cast<std::size_t>(n));
  for (auto idx : order) out.eigenvalues.push_back(values[idx]);

  Eigen::VectorXcd v = vectors.col(order.front());
  double norm1 = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) norm1 += std::abs(v[i]);
  if (norm1 > 0.0) v /= norm1;
  // Phase convention: largest-modulus entry real and nonnegative.
  Eigen::Index imax = 0;
  double amax = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double a = std::abs(v[i]);
    if (a > amax) {
      amax = a;
      imax = i;
    }
  }
  if (amax > 0.0) v *= std::abs(v[imax]) / v[imax];

  out.dominant_vector.assign(v.data(), v.data() + n);
  return out;
}

}  // namespace structpop
