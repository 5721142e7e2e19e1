#include <catch_amalgamated.hpp>
#include <cmath>
#include <random>

#include "structpop/equilibrium.hpp"
#include "test_models.hpp"

using namespace structpop;
using Catch::Approx;

TEST_CASE("survival factor closed forms") {
  const auto grid = SizeGrid::uniform(1.0, 1000);

  SECTION("constant rates give exponential survival") {
    const auto F = survival_factor(testmodels::reference(), grid, 1.0);
    for (std::size_t i = 0; i < grid.n_cells; i += 199)
      REQUIRE(F[i] == Approx(std::exp(-grid.midpoints[i])).margin(1e-6));
    REQUIRE(F.front() == Approx(1.0).margin(1e-3));  // F(0+) ~ 1
    for (double v : F) REQUIRE(v > 0.0);
  }

  SECTION("zero mortality and constant growth give F = 1") {
    auto rates = testmodels::reference();
    rates.mu = testmodels::constant(0.0);
    for (double v : survival_factor(rates, grid, 0.5))
      REQUIRE(v == Approx(1.0).margin(1e-12));
  }

  SECTION("gamma = 1 + s, mu = 0 gives F = 1/(1+s)") {
    auto rates = testmodels::reference();
    rates.mu = testmodels::constant(0.0);
    rates.gamma = make_rate_surface("affine_s", {{"c0", 1.0}, {"c1", 1.0}});
    const auto F = survival_factor(rates, grid, 0.0);
    for (std::size_t i = 0; i < grid.n_cells; i += 173)
      REQUIRE(F[i] == Approx(1.0 / (1.0 + grid.midpoints[i])).margin(1e-6));
  }

  SECTION("nonpositive growth is a model error") {
    auto rates = testmodels::reference();
    rates.gamma = testmodels::constant(0.0);
    REQUIRE_THROWS_AS(survival_factor(rates, grid, 1.0), ModelError);
  }
}

TEST_CASE("net reproduction function of the reference model") {
  const auto rates = testmodels::reference();
  const auto grid = SizeGrid::uniform(1.0, 1000);
  // closed form R(P) = exp(1 - P)
  REQUIRE(net_reproduction(rates, grid, 1.0) == Approx(1.0).margin(1e-5));
  REQUIRE(net_reproduction(rates, grid, 0.5) ==
          Approx(std::exp(0.5)).margin(1e-5));
  REQUIRE(net_reproduction(rates, grid, 3.0) ==
          Approx(std::exp(-2.0)).margin(1e-5));

  SECTION("vanishing fertility gives R = 0") {
    auto zero = rates;
    zero.beta = FertilityKernel::separable(testmodels::constant(0.0),
                                           testmodels::constant(1.0));
    REQUIRE(net_reproduction(zero, grid, 1.0) == 0.0);
  }

  SECTION("R is linear in beta1") {
    auto doubled = rates;
    doubled.beta = FertilityKernel::separable(
        make_rate_surface("exp_decay_P", {{"a", 2.0 * std::exp(2.0)}, {"k", 1.0}}),
        testmodels::constant(1.0));
    REQUIRE(net_reproduction(doubled, grid, 0.7) ==
            Approx(2.0 * net_reproduction(rates, grid, 0.7)).epsilon(1e-12));
  }

  SECTION("general kernels are routed to the general solver") {
    REQUIRE_THROWS_AS(
        net_reproduction(testmodels::declared_general(), grid, 1.0), RouteError);
  }
}

TEST_CASE("separable equilibrium of the reference model") {
  const auto rates = testmodels::reference();
  const auto grid = SizeGrid::uniform(1.0, 1000);
  const auto eqs = solve_equilibrium_separable(rates, grid, {1e-3, 100.0});
  REQUIRE(eqs.size() == 1);
  const auto& eq = eqs.front();
  REQUIRE(eq.P_star == Approx(1.0).margin(1e-6));
  REQUIRE(eq.P_bar_star.has_value());
  REQUIRE(*eq.P_bar_star == Approx(1.0).margin(1e-5));
  REQUIRE(eq.route == EquilibriumSolution::Route::separable);

  // closed-form profile p(s) = e (1 - e^{-s})
  for (std::size_t i = 0; i < grid.n_cells; i += 101) {
    const double s = grid.midpoints[i];
    REQUIRE(eq.p_star[i] ==
            Approx(std::exp(1.0) * (1.0 - std::exp(-s))).margin(1e-4));
    REQUIRE(eq.p_star[i] >= 0.0);
  }
  REQUIRE(eq.residual_total <= 1e-8 * eq.P_star);

  SECTION("scaling the fertility by e moves the equilibrium to P = 2") {
    const auto scaled =
        solve_equilibrium_separable(testmodels::reference_scaled(), grid,
                                    {1e-3, 100.0});
    REQUIRE(scaled.size() == 1);
    REQUIRE(scaled.front().P_star == Approx(2.0).margin(1e-6));
  }

  SECTION("vanishing fertility yields no equilibrium") {
    auto zero = rates;
    zero.beta = FertilityKernel::separable(testmodels::constant(0.0),
                                           testmodels::constant(1.0));
    REQUIRE(solve_equilibrium_separable(zero, grid, {1e-3, 100.0}).empty());
  }
}

TEST_CASE("boundary value of the profile vanishes under refinement") {
  const auto rates = testmodels::reference();
  double prev = 0.0;
  for (std::size_t n : {100, 200, 400}) {
    const auto grid = SizeGrid::uniform(1.0, n);
    const auto eq = solve_equilibrium_separable(rates, grid, {1e-3, 100.0}).front();
    if (prev > 0.0) REQUIRE(eq.p_star.front() < prev);
    prev = eq.p_star.front();
  }
  REQUIRE(prev < 0.01);
}

TEST_CASE("stationary residual is first order in h") {
  const auto rates = testmodels::reference();
  const auto eq200 =
      solve_equilibrium_separable(rates, SizeGrid::uniform(1.0, 200), {0.1, 10.0})
          .front();
  const auto eq400 =
      solve_equilibrium_separable(rates, SizeGrid::uniform(1.0, 400), {0.1, 10.0})
          .front();
  REQUIRE(eq200.residual_stationary < 10.0 / 200.0);
  const double ratio = eq200.residual_stationary / eq400.residual_stationary;
  REQUIRE(ratio > 1.5);
  REQUIRE(ratio < 4.0);
}

TEST_CASE("stationary operator structure") {
  auto rates = testmodels::reference();
  rates.mu = testmodels::constant(0.0);
  rates.beta = FertilityKernel::separable(testmodels::constant(0.0),
                                          testmodels::constant(1.0));
  const auto grid = SizeGrid::uniform(1.0, 16);
  const double h = grid.spacing();

  SECTION("pure transport is lower bidiagonal upwind") {
    const auto op = assemble_B_P(rates, grid, 0.0);
    for (Eigen::Index i = 0; i < 16; ++i)
      for (Eigen::Index j = 0; j < 16; ++j) {
        if (i == j)
          REQUIRE(op.entries(i, j) == Approx(-1.0 / h));
        else if (j == i - 1)
          REQUIRE(op.entries(i, j) == Approx(1.0 / h));
        else
          REQUIRE(op.entries(i, j) == 0.0);
      }
  }

  SECTION("constant mortality shifts the diagonal") {
    auto with_mu = rates;
    with_mu.mu = testmodels::constant(0.7);
    const auto base = assemble_B_P(rates, grid, 0.0);
    const auto shifted = assemble_B_P(with_mu, grid, 0.0);
    const Eigen::MatrixXd diff = shifted.entries - base.entries;
    for (Eigen::Index i = 0; i < 16; ++i)
      for (Eigen::Index j = 0; j < 16; ++j)
        REQUIRE(diff(i, j) == Approx(i == j ? -0.7 : 0.0).margin(1e-13));
  }

  SECTION("grid floor") {
    REQUIRE_THROWS_AS(assemble_B_P(rates, SizeGrid::uniform(1.0, 4), 0.0),
                      ArgumentError);
  }
}

TEST_CASE("Metzler structure of randomized admissible operators") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto grid = SizeGrid::uniform(1.0, 24);
  for (int trial = 0; trial < 20; ++trial) {
    VitalRates rates;
    rates.m = 1.0;
    rates.gamma = make_rate_surface("affine_s", {{"c0", 0.5 + u(rng)},
                                                 {"c1", 0.5 * u(rng)}});
    rates.mu = testmodels::constant(2.0 * u(rng));
    rates.beta = FertilityKernel::separable(
        make_rate_surface("exp_decay_P", {{"a", 3.0 * u(rng)}, {"k", u(rng)}}),
        make_rate_surface("gaussian_s",
                          {{"a", 1.0 + u(rng)}, {"s0", u(rng)}, {"sigma", 0.3}}));
    const auto op = assemble_B_P(rates, grid, 2.0 * u(rng));
    for (Eigen::Index i = 0; i < op.entries.rows(); ++i)
      for (Eigen::Index j = 0; j < op.entries.cols(); ++j)
        if (i != j) REQUIRE(op.entries(i, j) >= -1e-12);
    // Perron structure: the dominant eigenvalue of a Metzler matrix is real.
    const auto dom = dominant_eigenvalue(rates, grid, 1.0);
    REQUIRE(std::isfinite(dom.lambda));
  }
}

TEST_CASE("dominant eigenvalue of the stationary operator") {
  const auto rates = testmodels::reference();

  SECTION("vanishes at the equilibrium population, shrinking with h") {
    const auto d200 = dominant_eigenvalue(rates, SizeGrid::uniform(1.0, 200), 1.0);
    REQUIRE(std::fabs(d200.lambda) <= 5e-2);
    const auto d400 = dominant_eigenvalue(rates, SizeGrid::uniform(1.0, 400), 1.0);
    REQUIRE(std::fabs(d400.lambda) < std::fabs(d200.lambda));
    // eigenvector: nonnegative, unit integral
    const auto grid = SizeGrid::uniform(1.0, 200);
    REQUIRE(integrate(d200.eigenvector, grid) == Approx(1.0).epsilon(1e-10));
    for (double v : d200.eigenvector) REQUIRE(v >= 0.0);
  }

  SECTION("negative beyond the equilibrium population") {
    const auto d = dominant_eigenvalue(rates, SizeGrid::uniform(1.0, 200), 3.0);
    REQUIRE(d.lambda < 0.0);
  }

  SECTION("transport plus decay without recruitment") {
    auto decay = rates;
    decay.beta = FertilityKernel::separable(testmodels::constant(0.0),
                                            testmodels::constant(1.0));
    decay.mu = testmodels::constant(0.8);
    const auto grid = SizeGrid::uniform(1.0, 128);
    const auto spec = dense_eigen(assemble_B_P(decay, grid, 1.0).entries);
    REQUIRE(spec.dominant().real() <= -0.8 + 10.0 * grid.spacing());
  }
}

TEST_CASE("monotone comparison of kernels") {
  // Enlarging the kernel pointwise never decreases the dominant eigenvalue.
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto grid = SizeGrid::uniform(1.0, 32);
  for (int trial = 0; trial < 10; ++trial) {
    VitalRates lo;
    lo.m = 1.0;
    lo.gamma = testmodels::constant(0.5 + u(rng));
    lo.mu = testmodels::constant(u(rng));
    const double a = 2.0 * u(rng), bump = 2.0 * u(rng);
    lo.beta = FertilityKernel::separable(testmodels::constant(a),
                                         testmodels::constant(1.0));
    VitalRates hi = lo;
    hi.beta = FertilityKernel::separable(testmodels::constant(a + bump),
                                         testmodels::constant(1.0));
    const double P = 3.0 * u(rng);
    const auto eig_lo = detail::dominant_eigenvalue_only(
        assemble_B_P(lo, grid, P).entries);
    const auto eig_hi = detail::dominant_eigenvalue_only(
        assemble_B_P(hi, grid, P).entries);
    REQUIRE(eig_hi >= eig_lo - 1e-9);
  }
}

TEST_CASE("general route agrees with the separable route") {
  const auto rates = testmodels::reference();
  const auto grid200 = SizeGrid::uniform(1.0, 200);
  const auto grid400 = SizeGrid::uniform(1.0, 400);

  const double sep200 =
      solve_equilibrium_separable(rates, grid200, {1e-3, 100.0}).front().P_star;
  const auto gen200 = solve_equilibrium_general(rates, grid200, {1e-3, 100.0});
  REQUIRE(gen200.size() == 1);
  REQUIRE(gen200.front().route == EquilibriumSolution::Route::general);
  const double gap200 = std::fabs(gen200.front().P_star - sep200);
  REQUIRE(gap200 <= 2e-2);

  const double sep400 =
      solve_equilibrium_separable(rates, grid400, {1e-3, 100.0}).front().P_star;
  const auto gen400 = solve_equilibrium_general(rates, grid400, {1e-3, 100.0});
  const double gap400 = std::fabs(gen400.front().P_star - sep400);
  const double ratio = gap200 / gap400;
  REQUIRE(ratio >= 1.5);
  REQUIRE(ratio <= 4.0);

  // general-route profile: nonnegative, integral P*, small residual
  const auto& eq = gen200.front();
  REQUIRE(eq.residual_total <= 1e-8 * eq.P_star);
  for (double v : eq.p_star) REQUIRE(v >= -1e-12);
}

TEST_CASE("general route handles a declared-general kernel") {
  const auto rates = testmodels::declared_general();
  const auto grid = SizeGrid::uniform(1.0, 200);
  REQUIRE_THROWS_AS(solve_equilibrium_separable(rates, grid, {1e-3, 100.0}),
                    RouteError);
  const auto eqs = solve_equilibrium_general(rates, grid, {1e-3, 100.0});
  REQUIRE(eqs.size() == 1);

  // Self-oracle: the same kernel declared separable, on a finer grid.
  VitalRates twin;
  twin.m = 1.0;
  twin.gamma = testmodels::constant(1.0);
  twin.mu = testmodels::constant(1.0);
  twin.beta = FertilityKernel::separable(
      make_rate_surface("exp_decay_P", {{"a", std::exp(2.0)}, {"k", 1.0}}),
      make_rate_surface("affine_s", {{"c0", 0.5}, {"c1", 0.5}}));
  const auto oracle =
      solve_equilibrium_separable(twin, SizeGrid::uniform(1.0, 800), {1e-3, 100.0})
          .front();
  REQUIRE(eqs.front().P_star == Approx(oracle.P_star).margin(2e-2));
}

TEST_CASE("existence condition report") {
  const auto rates = testmodels::reference();
  const auto grid = SizeGrid::uniform(1.0, 400);

  SECTION("reference model with itself as both comparison kernels") {
    ComparisonKernels cmp{rates.beta, rates.beta, 0.5, 2.0};
    const auto report = check_existence_conditions(rates, grid, cmp);
    REQUIRE(report.has_comparison);
    REQUIRE(report.lower_dominated);
    REQUIRE(report.upper_dominates);
    // thresholds reproduce R(0.5) = e^{1/2} and R(2) = e^{-1}
    REQUIRE(report.lower_threshold == Approx(std::exp(0.5)).margin(1e-4));
    REQUIRE(report.upper_threshold == Approx(std::exp(-1.0)).margin(1e-4));
    REQUIRE(report.lower_threshold_above_1);
    REQUIRE(report.upper_threshold_below_1);
    // beta(s,y,0) = e^2 > mu = 1 everywhere
    REQUIRE(report.beta_exceeds_mu_at_zero);
    REQUIRE(report.beta_minus_mu_min == Approx(std::exp(2.0) - 1.0).margin(1e-10));
    // fertility mass decays like e^{-P}
    REQUIRE(report.beta1_mass_decays);
    // survival integral 1 - e^{-1} vs m - 1 = 0: reported, does not hold
    REQUIRE(report.survival_integral == Approx(1.0 - std::exp(-1.0)).margin(1e-5));
    REQUIRE_FALSE(report.survival_integral_below_m_minus_1);
  }

  SECTION("vanishing kernel fails the lower threshold") {
    auto zero = rates;
    zero.beta = FertilityKernel::separable(testmodels::constant(0.0),
                                           testmodels::constant(1.0));
    ComparisonKernels cmp{zero.beta, zero.beta, 0.5, 2.0};
    const auto report = check_existence_conditions(zero, grid, cmp);
    REQUIRE_FALSE(report.lower_threshold_above_1);
    REQUIRE(report.lower_threshold == 0.0);
  }

  SECTION("zero mortality makes the sign comparison trivial") {
    auto rates2 = rates;
    rates2.mu = testmodels::constant(0.0);
    rates2.beta = FertilityKernel::separable(testmodels::constant(1.0),
                                             testmodels::constant(1.0));
    const auto report = check_existence_conditions(rates2, grid);
    REQUIRE(report.beta_exceeds_mu_at_zero);
  }
}

TEST_CASE("density derivative reconstructed from the stationary equation") {
  const auto rates = testmodels::reference();
  const auto grid = SizeGrid::uniform(1.0, 500);
  const auto eq = solve_equilibrium_separable(rates, grid, {0.1, 10.0}).front();
  const auto dp = stationary_density_derivative(rates, eq, grid);
  // p(s) = e (1 - e^{-s})  =>  p'(s) = e e^{-s}
  for (std::size_t i = 0; i < grid.n_cells; i += 61)
    REQUIRE(dp[i] ==
            Approx(std::exp(1.0 - grid.midpoints[i])).margin(2e-3));
}
