#include <catch_amalgamated.hpp>
#include <algorithm>
#include <cmath>
#include <random>

#include "structpop/eigen_dense.hpp"

using namespace structpop;
using Catch::Approx;

namespace {

Eigen::MatrixXd random_metzler(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> off(0.0, 1.0), diag(-3.0, 1.0);
  Eigen::MatrixXd A(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) A(i, j) = i == j ? diag(rng) : off(rng);
  return A;
}

}  // namespace

TEST_CASE("diagonal matrix spectrum") {
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(3, 3);
  A(0, 0) = 1.0;
  A(1, 1) = 2.0;
  A(2, 2) = 3.0;
  const auto spec = dense_eigen(A);
  REQUIRE(spec.eigenvalues.size() == 3);
  REQUIRE(spec.dominant().real() == Approx(3.0));
  REQUIRE(spec.eigenvalues[1].real() == Approx(2.0));
  REQUIRE(spec.eigenvalues[2].real() == Approx(1.0));
  // dominant eigenvector is the third basis vector (unit 1-norm, nonneg)
  REQUIRE(std::abs(spec.dominant_vector[2]) == Approx(1.0));
  REQUIRE(spec.dominant_vector[2].real() > 0.0);
  REQUIRE(std::abs(spec.dominant_vector[0]) == Approx(0.0).margin(1e-14));
}

TEST_CASE("swap matrix has eigenvalues -1 and +1") {
  Eigen::MatrixXd A(2, 2);
  A << 0, 1, 1, 0;
  const auto spec = dense_eigen(A);
  REQUIRE(spec.eigenvalues[0].real() == Approx(1.0));
  REQUIRE(spec.eigenvalues[1].real() == Approx(-1.0));
}

TEST_CASE("errors on bad input") {
  REQUIRE_THROWS_AS(dense_eigen(Eigen::MatrixXd(0, 0)), ArgumentError);
  REQUIRE_THROWS_AS(dense_eigen(Eigen::MatrixXd(2, 3)), ArgumentError);
  Eigen::MatrixXd bad(2, 2);
  bad << 1.0, std::nan(""), 0.0, 1.0;
  REQUIRE_THROWS_AS(dense_eigen(bad), ArgumentError);
}

TEST_CASE("Metzler matrices have a real dominant eigenvalue") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 30; ++trial) {
    const auto A = random_metzler(5, rng);
    const auto spec = dense_eigen(A);
    REQUIRE(std::fabs(spec.dominant().imag()) < 1e-9);
    // Perron vector can be taken entrywise nonnegative.
    double vmax = 0.0;
    for (const auto& v : spec.dominant_vector)
      vmax = std::fmax(vmax, std::abs(v));
    for (const auto& v : spec.dominant_vector) {
      REQUIRE(v.real() > -1e-9 * vmax);
      REQUIRE(std::fabs(v.imag()) < 1e-9 * vmax);
    }
  }
}

TEST_CASE("spectrum is similarity invariant under permutations") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 6;
    Eigen::MatrixXd A(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) A(i, j) = u(rng);

    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) P(perm[i], i) = 1.0;
    const Eigen::MatrixXd B = P * A * P.transpose();

    auto ea = dense_eigen(A).eigenvalues;
    auto eb = dense_eigen(B).eigenvalues;
    for (std::size_t k = 0; k < ea.size(); ++k)
      REQUIRE(std::abs(ea[k] - eb[k]) < 1e-9);
  }
}
