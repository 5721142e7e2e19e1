#include <catch_amalgamated.hpp>
#include <cmath>
#include <random>

#include "structpop/grid.hpp"

using namespace structpop;
using Catch::Approx;

TEST_CASE("uniform grid geometry") {
  const auto g = SizeGrid::uniform(2.5, 10);
  REQUIRE(g.edges.front() == 0.0);
  REQUIRE(g.edges.back() == 2.5);
  double sum = 0.0;
  for (std::size_t i = 0; i < g.n_cells; ++i) {
    REQUIRE(g.edges[i] < g.edges[i + 1]);
    REQUIRE(g.midpoints[i] > g.edges[i]);
    REQUIRE(g.midpoints[i] < g.edges[i + 1]);
    sum += g.weights[i];
  }
  REQUIRE(sum == Approx(2.5).epsilon(1e-13));
  REQUIRE_THROWS_AS(SizeGrid::uniform(-1.0, 4), ArgumentError);
  REQUIRE_THROWS_AS(SizeGrid::uniform(1.0, 0), ArgumentError);
}

TEST_CASE("integrate constants and smooth functions") {
  const auto g = SizeGrid::uniform(1.0, 1000);
  std::vector<double> ones(g.n_cells, 1.0);
  REQUIRE(integrate(ones, g) == Approx(1.0).margin(1e-12));

  std::vector<double> lin(g.n_cells), expdecay(g.n_cells);
  for (std::size_t i = 0; i < g.n_cells; ++i) {
    lin[i] = g.midpoints[i];
    expdecay[i] = std::exp(-g.midpoints[i]);
  }
  REQUIRE(integrate(lin, g) == Approx(0.5).margin(1e-6));
  REQUIRE(integrate(expdecay, g) == Approx(1.0 - std::exp(-1.0)).margin(1e-6));

  std::vector<double> wrong(3, 1.0);
  REQUIRE_THROWS_AS(integrate(wrong, g), ArgumentError);
}

TEST_CASE("integrate is linear") {
  const auto g = SizeGrid::uniform(3.0, 64);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> f(g.n_cells), h(g.n_cells), combo(g.n_cells);
    const double a = u(rng), b = u(rng);
    for (std::size_t i = 0; i < g.n_cells; ++i) {
      f[i] = u(rng);
      h[i] = u(rng);
      combo[i] = a * f[i] + b * h[i];
    }
    const double lhs = integrate(combo, g);
    const double rhs = a * integrate(f, g) + b * integrate(h, g);
    REQUIRE(lhs == Approx(rhs).epsilon(1e-12).margin(1e-12));
  }
}

TEST_CASE("cumulative integral") {
  const auto g = SizeGrid::uniform(1.0, 1000);

  SECTION("constant integrand accumulates to the midpoint") {
    std::vector<double> ones(g.n_cells, 1.0);
    const auto I = cumulative_integral(ones, g);
    for (std::size_t i = 0; i < g.n_cells; i += 97)
      REQUIRE(I[i] == Approx(g.midpoints[i]).margin(1e-13));
  }

  SECTION("zero integrand stays zero") {
    std::vector<double> zeros(g.n_cells, 0.0);
    for (double v : cumulative_integral(zeros, g)) REQUIRE(v == 0.0);
  }

  SECTION("f = 2s accumulates to s^2") {
    std::vector<double> f(g.n_cells);
    for (std::size_t i = 0; i < g.n_cells; ++i) f[i] = 2.0 * g.midpoints[i];
    const auto I = cumulative_integral(f, g);
    for (std::size_t i = 0; i < g.n_cells; i += 83)
      REQUIRE(I[i] == Approx(g.midpoints[i] * g.midpoints[i]).margin(1e-5));
  }

  SECTION("nondecreasing for nonnegative data, consistent with integrate") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> f(g.n_cells);
    for (auto& v : f) v = u(rng);
    const auto I = cumulative_integral(f, g);
    for (std::size_t i = 1; i < g.n_cells; ++i) REQUIRE(I[i] >= I[i - 1]);
    const double total = integrate(f, g);
    REQUIRE(std::fabs(total - I.back()) <= g.weights.back() * f.back());
  }

  SECTION("length mismatch") {
    std::vector<double> bad(5, 1.0);
    REQUIRE_THROWS_AS(cumulative_integral(bad, g), ArgumentError);
  }
}

TEST_CASE("rectangle sanity") {
  REQUIRE_THROWS_AS(Rectangle(1.0, 0.0, -1.0, 1.0), ArgumentError);
  const Rectangle r(-1.0, 2.0, -3.0, 4.0);
  REQUIRE(r.contains(0.0, 0.0));
  REQUIRE_FALSE(r.contains(3.0, 0.0));
  REQUIRE(r.contains(2.5, 0.0, 1.0));
}
