#include <catch_amalgamated.hpp>
#include <cmath>

#include "structpop/roots.hpp"

using namespace structpop;
using Catch::Approx;

TEST_CASE("bracketed_root basics") {
  REQUIRE(bracketed_root([](double x) { return x - 0.5; }, 0.0, 1.0, 1e-12) ==
          Approx(0.5).margin(1e-10));
  // closed-form root of e^{1-x} = 1
  REQUIRE(bracketed_root([](double x) { return std::exp(1.0 - x) - 1.0; }, 0.0,
                         5.0, 1e-12) == Approx(1.0).margin(1e-10));
  REQUIRE_THROWS_AS(
      bracketed_root([](double x) { return x * x + 1.0; }, 0.0, 1.0, 1e-10),
      BracketError);
  REQUIRE_THROWS_AS(
      bracketed_root([](double x) { return x; }, 0.0, 1.0, -1.0), ArgumentError);
}

TEST_CASE("bracketed_root accepts exact zeros at endpoints") {
  REQUIRE(bracketed_root([](double x) { return x; }, 0.0, 1.0, 1e-10) == 0.0);
  REQUIRE(bracketed_root([](double x) { return x - 1.0; }, 0.0, 1.0, 1e-10) == 1.0);
}

TEST_CASE("scan_sign_changes finds the zeros of sine") {
  const auto brackets =
      scan_sign_changes([](double x) { return std::sin(x); }, 0.1, 7.0, 100);
  REQUIRE(brackets.size() == 2);
  const double pi = 3.14159265358979323846;
  REQUIRE(brackets[0].lo < pi);
  REQUIRE(brackets[0].hi > pi);
  REQUIRE(brackets[1].lo < 2.0 * pi);
  REQUIRE(brackets[1].hi > 2.0 * pi);
}

TEST_CASE("scan_sign_changes corner cases") {
  REQUIRE(scan_sign_changes([](double) { return 1.0; }, 0.0, 1.0, 50).empty());

  // f(x) = x - 3 sampled on the integers hits zero exactly at a sample.
  const auto brackets =
      scan_sign_changes([](double x) { return x - 3.0; }, 0.0, 10.0, 11);
  REQUIRE(brackets.size() == 1);
  REQUIRE(brackets[0].lo <= 3.0);
  REQUIRE(brackets[0].hi >= 3.0);

  REQUIRE_THROWS_AS(
      scan_sign_changes([](double x) { return 1.0 / x; }, -1.0, 1.0, 21),
      EvaluationError);
  REQUIRE_THROWS_AS(scan_sign_changes([](double) { return 0.0; }, 1.0, 0.0, 10),
                    ArgumentError);
}

TEST_CASE("geometric spacing for positive ranges") {
  // log-spaced samples resolve a root at x = 0.01 inside [1e-3, 1e3]
  const auto brackets = scan_sign_changes(
      [](double x) { return std::log(x / 0.01); }, 1e-3, 1e3, 64);
  REQUIRE(brackets.size() == 1);
  const double root =
      bracketed_root([](double x) { return std::log(x / 0.01); }, brackets[0].lo,
                     brackets[0].hi, 1e-14);
  REQUIRE(root == Approx(0.01).epsilon(1e-8));
}
