#include <catch_amalgamated.hpp>
#include <cmath>
#include <random>

#include "structpop/simulate.hpp"
#include "structpop/stability.hpp"
#include "structpop/verify.hpp"
#include "test_models.hpp"

using namespace structpop;
using Catch::Approx;

namespace {

VitalRates pure_transport(double gamma = 1.0) {
  VitalRates r;
  r.m = 1.0;
  r.gamma = testmodels::constant(gamma);
  r.mu = testmodels::constant(0.0);
  r.beta = FertilityKernel::separable(testmodels::constant(0.0),
                                      testmodels::constant(1.0));
  return r;
}

std::vector<double> mid_supported_block(const SizeGrid& grid, double lo, double hi,
                                        double height) {
  std::vector<double> p0(grid.n_cells, 0.0);
  for (std::size_t i = 0; i < grid.n_cells; ++i)
    if (grid.midpoints[i] >= lo && grid.midpoints[i] <= hi) p0[i] = height;
  return p0;
}

}  // namespace

TEST_CASE("right-hand side") {
  const auto grid = SizeGrid::uniform(1.0, 200);

  SECTION("zero density is stationary") {
    PopulationState st{grid, std::vector<double>(grid.n_cells, 0.0), 0.0};
    for (double v : rhs(st, testmodels::reference())) REQUIRE(v == 0.0);
  }

  SECTION("computed equilibrium is stationary up to O(h)") {
    const auto rates = testmodels::reference();
    const auto eq = solve_equilibrium_separable(rates, grid, {0.1, 10.0}).front();
    PopulationState st{grid, eq.p_star, 0.0};
    const auto r = rhs(st, rates);
    double l1 = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) l1 += grid.weights[i] * std::fabs(r[i]);
    REQUIRE(l1 <= 10.0 * grid.spacing());
  }

  SECTION("pure transport only loses mass through the outflow") {
    const auto rates = pure_transport();
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> p(grid.n_cells);
    for (auto& v : p) v = u(rng);
    PopulationState st{grid, p, 0.0};
    const auto r = rhs(st, rates);
    const double mass_rate = integrate(r, grid);
    const double outflux = 1.0 * p.back();  // gamma(m) * density in the last cell
    REQUIRE(mass_rate == Approx(-outflux).margin(1e-12));
    REQUIRE(mass_rate <= 0.0);
  }
}

TEST_CASE("single step") {
  const auto grid = SizeGrid::uniform(1.0, 100);
  const auto rates = testmodels::reference();

  SECTION("zero stays zero") {
    PopulationState st{grid, std::vector<double>(grid.n_cells, 0.0), 0.0};
    const auto next = step(st, rates, 1e-3);
    for (double v : next.density) REQUIRE(v == 0.0);
    REQUIRE(next.time == Approx(1e-3));
  }

  SECTION("a step from the equilibrium moves P by at most C h dt") {
    const auto eq = solve_equilibrium_separable(rates, grid, {0.1, 10.0}).front();
    PopulationState st{grid, eq.p_star, 0.0};
    const double dt = admissible_step(st, rates);
    const auto next = step(st, rates, dt);
    REQUIRE(std::fabs(next.total() - eq.P_star) <= 10.0 * grid.spacing() * dt);
  }

  SECTION("an inadmissible step is rejected with the bound") {
    PopulationState st{grid, std::vector<double>(grid.n_cells, 1.0), 0.0};
    const double dt_max = admissible_step(st, rates);
    REQUIRE_THROWS_AS(step(st, rates, 2.0 * dt_max), StepSizeError);
    REQUIRE_THROWS_AS(step(st, rates, -1.0), ArgumentError);
  }

  SECTION("density stays nonnegative over random models and data") {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const auto g = SizeGrid::uniform(1.0, 64);
    for (int trial = 0; trial < 25; ++trial) {
      VitalRates r;
      r.m = 1.0;
      r.gamma = make_rate_surface("affine_s",
                                  {{"c0", 0.5 + u(rng)}, {"c1", u(rng)}});
      r.mu = testmodels::constant(3.0 * u(rng));
      r.beta = FertilityKernel::separable(
          make_rate_surface("exp_decay_P", {{"a", 4.0 * u(rng)}, {"k", u(rng)}}),
          testmodels::constant(1.0));
      std::vector<double> p(g.n_cells);
      for (auto& v : p) v = 2.0 * u(rng);
      PopulationState st{g, p, 0.0};
      for (int k = 0; k < 40; ++k) {
        st = step(st, r, admissible_step(st, r));
        for (double v : st.density) REQUIRE(v >= 0.0);
      }
    }
  }
}

TEST_CASE("simulation traces") {
  SECTION("zero initial data gives the zero trace") {
    const auto grid = SizeGrid::uniform(1.0, 64);
    const auto trace = simulate(std::vector<double>(grid.n_cells, 0.0),
                                testmodels::reference(), grid, 0.5);
    for (double P : trace.totals) REQUIRE(P == 0.0);
  }

  SECTION("t_end = 0 yields a single row") {
    const auto grid = SizeGrid::uniform(1.0, 64);
    const auto trace = simulate(std::vector<double>(grid.n_cells, 1.0),
                                testmodels::reference(), grid, 0.0);
    REQUIRE(trace.times.size() == 1);
    REQUIRE(trace.times.front() == 0.0);
  }

  SECTION("equilibrium persists within O(h)") {
    const auto grid = SizeGrid::uniform(1.0, 400);
    const auto rates = testmodels::reference();
    const auto eq = solve_equilibrium_separable(rates, grid, {0.1, 10.0}).front();
    const auto trace = simulate(eq.p_star, rates, grid, 2.0);
    for (double P : trace.totals)
      REQUIRE(std::fabs(P - eq.P_star) <= 1e-2);
  }

  SECTION("decay bound without recruitment") {
    auto rates = pure_transport();
    rates.mu = testmodels::constant(1.0);
    const auto grid = SizeGrid::uniform(1.0, 200);
    const auto p0 = mid_supported_block(grid, 0.0, 1.0, 1.0);
    const auto trace = simulate(p0, rates, grid, 0.9);
    for (std::size_t k = 0; k < trace.times.size(); ++k)
      REQUIRE(trace.totals[k] <=
              std::exp(-trace.times[k]) + 10.0 * grid.spacing());
  }

  SECTION("pure transport empties the domain within the transit time") {
    for (double gamma : {1.0, 0.7}) {
      const auto rates = pure_transport(gamma);
      const auto grid = SizeGrid::uniform(1.0, 200);
      const double total_transit = transit_time_total(rates, grid, 0.0);
      REQUIRE(total_transit == Approx(1.0 / gamma).epsilon(1e-12));
      const auto p0 = mid_supported_block(grid, 0.45, 0.8, 3.0);
      const double mass0 = integrate(p0, grid);
      const auto trace = simulate(p0, rates, grid, 1.1 * total_transit);
      REQUIRE(trace.totals.back() <= 1e-6 * mass0);
    }
  }

  SECTION("mass-balance residual is second order in dt") {
    const auto grid = SizeGrid::uniform(1.0, 200);
    const auto rates = testmodels::stable_mortality();
    const auto eq = solve_equilibrium_separable(rates, grid, {0.1, 10.0}).front();
    const auto p0 = perturb_equilibrium(eq, grid, 0.05, PerturbationMode::uniform);
    const auto trace = simulate(p0, rates, grid, 1.0);
    const double dt = 0.9 * grid.spacing();  // transport-limited step
    double worst = 0.0;
    for (double r : trace.mass_balance_residuals) worst = std::fmax(worst, r);
    REQUIRE(worst <= 100.0 * (dt * dt + grid.spacing() * dt));
    for (std::size_t k = 1; k < trace.times.size(); ++k)
      REQUIRE(trace.times[k] > trace.times[k - 1]);
    for (double P : trace.totals) REQUIRE(P >= 0.0);
  }

  SECTION("snapshots follow the cadence") {
    const auto grid = SizeGrid::uniform(1.0, 64);
    const auto trace = simulate(std::vector<double>(grid.n_cells, 1.0),
                                testmodels::reference(), grid, 1.0, 0.25);
    REQUIRE(trace.snapshot_times.size() == 5);
    for (std::size_t k = 0; k < trace.snapshot_times.size(); ++k)
      REQUIRE(trace.snapshot_times[k] == Approx(0.25 * k).margin(1e-9));
  }
}

TEST_CASE("equilibrium perturbations") {
  const auto grid = SizeGrid::uniform(1.0, 200);
  const auto rates = testmodels::reference();
  const auto eq = solve_equilibrium_separable(rates, grid, {0.1, 10.0}).front();

  SECTION("zero amplitude returns the equilibrium") {
    const auto p0 = perturb_equilibrium(eq, grid, 0.0, PerturbationMode::uniform);
    for (std::size_t i = 0; i < p0.size(); ++i) REQUIRE(p0[i] == eq.p_star[i]);
  }

  SECTION("uniform mode scales the total population") {
    const auto p0 = perturb_equilibrium(eq, grid, 0.03, PerturbationMode::uniform);
    REQUIRE(integrate(p0, grid) == Approx(1.03 * eq.P_star).epsilon(1e-9));
  }

  SECTION("random mode is seed deterministic") {
    const auto a = perturb_equilibrium(eq, grid, 0.05, PerturbationMode::random, 7);
    const auto b = perturb_equilibrium(eq, grid, 0.05, PerturbationMode::random, 7);
    const auto c = perturb_equilibrium(eq, grid, 0.05, PerturbationMode::random, 8);
    REQUIRE(a == b);
    REQUIRE(a != c);
    for (double v : a) REQUIRE(v >= 0.0);
  }

  SECTION("eigenvector mode uses the dominant shape") {
    const auto lin = assemble_linearized(rates, eq, grid, false);
    const auto spec = dense_eigen(lin.matrix);
    std::vector<double> shape(grid.n_cells);
    for (std::size_t i = 0; i < grid.n_cells; ++i)
      shape[i] = spec.dominant_vector[i].real();
    const auto p0 = perturb_equilibrium(eq, grid, 0.02,
                                        PerturbationMode::first_eigvec, 0, shape);
    REQUIRE(p0.size() == grid.n_cells);
    REQUIRE_THROWS_AS(
        perturb_equilibrium(eq, grid, 0.02, PerturbationMode::first_eigvec),
        ArgumentError);
  }

  SECTION("amplitude outside the linear regime is rejected") {
    REQUIRE_THROWS_AS(perturb_equilibrium(eq, grid, 0.5, PerturbationMode::uniform),
                      ArgumentError);
  }
}

TEST_CASE("growth rate measurement") {
  SECTION("recovers a synthetic exponential rate") {
    SimulationTrace trace;
    for (int k = 0; k <= 400; ++k) {
      const double t = 0.01 * k;
      trace.times.push_back(t);
      trace.totals.push_back(1.0 + 0.01 * std::exp(-0.5 * t));
    }
    const auto est = measure_growth_rate(trace, 1.0, {0.0, 4.0});
    REQUIRE(est.rate == Approx(-0.5).margin(1e-3));
    REQUIRE_FALSE(est.oscillatory);
  }

  SECTION("flat traces are rejected") {
    SimulationTrace trace;
    for (int k = 0; k <= 100; ++k) {
      trace.times.push_back(0.01 * k);
      trace.totals.push_back(1.0);
    }
    REQUIRE_THROWS_AS(measure_growth_rate(trace, 1.0, {0.0, 1.0}), ArgumentError);
  }

  SECTION("oscillatory deviations fall back to the envelope") {
    SimulationTrace trace;
    for (int k = 0; k <= 3000; ++k) {
      const double t = 0.01 * k;
      trace.times.push_back(t);
      trace.totals.push_back(1.0 + 0.01 * std::exp(-0.3 * t) * std::cos(5.0 * t));
    }
    const auto est = measure_growth_rate(trace, 1.0, {0.0, 30.0});
    REQUIRE(est.oscillatory);
    REQUIRE(est.rate == Approx(-0.3).margin(2e-2));
  }

  SECTION("measured rate matches the dominant eigenvalue") {
    const auto rates = testmodels::stable_mortality();
    const auto grid = SizeGrid::uniform(1.0, 200);
    const auto eq0 = solve_equilibrium_separable(rates, grid, {0.1, 10.0}).front();
    const auto eq = refine_discrete_equilibrium(rates, eq0, grid);
    const auto lin = assemble_linearized(rates, eq, grid, false);
    const double dom = dense_eigen(lin.matrix).dominant().real();
    const auto p0 = perturb_equilibrium(eq, grid, 0.01, PerturbationMode::uniform);
    const auto trace = simulate(p0, rates, grid, 8.0);
    const auto est = measure_growth_rate(trace, eq.P_star, {1.0, 7.0});
    REQUIRE(est.rate == Approx(dom).margin(std::fmax(0.05, 10.0 * grid.spacing())));
  }

  SECTION("measured rate is amplitude independent in the linear regime") {
    const auto rates = testmodels::stable_mortality();
    const auto grid = SizeGrid::uniform(1.0, 200);
    const auto eq = refine_discrete_equilibrium(
        rates, solve_equilibrium_separable(rates, grid, {0.1, 10.0}).front(),
        grid);
    double rate[2];
    int idx = 0;
    for (double amplitude : {0.01, 0.02}) {
      const auto p0 =
          perturb_equilibrium(eq, grid, amplitude, PerturbationMode::uniform);
      const auto trace = simulate(p0, rates, grid, 6.0);
      const auto est = measure_growth_rate(trace, eq.P_star, {0.5, 5.0});
      REQUIRE(est.rate < 0.0);  // matches the stable verdict
      rate[idx++] = est.rate;
    }
    REQUIRE(std::fabs(rate[0] - rate[1]) <= 0.2 * std::fabs(rate[0]));
  }
}

TEST_CASE("transit times") {
  const auto grid = SizeGrid::uniform(1.0, 500);
  {
    const auto rates = pure_transport(1.0);
    const auto T = transit_time(rates, grid, 0.0);
    for (std::size_t i = 0; i < grid.n_cells; i += 61)
      REQUIRE(T[i] == Approx(grid.midpoints[i]).margin(1e-12));
  }
  {
    VitalRates rates = pure_transport(1.0);
    rates.gamma = make_rate_surface("affine_s", {{"c0", 1.0}, {"c1", 1.0}});
    REQUIRE(transit_time_total(rates, grid, 0.0) ==
            Approx(std::log(2.0)).margin(1e-5));
  }
}
