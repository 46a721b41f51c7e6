#include <cmath>

#include "doctest.h"
#include "spike_crown/error.hpp"
#include "spike_crown/nonlinearity.hpp"

using namespace spike_crown;

TEST_CASE("power nonlinearity values") {
  const Nonlinearity cubic(3.0);
  CHECK(cubic.eval_f(0.0) == 0.0);
  CHECK(cubic.eval_f(2.0) == doctest::Approx(4.0));
  CHECK(cubic.eval_f(-2.0) == doctest::Approx(-4.0));
  CHECK(cubic.eval_F(3.0) == doctest::Approx(9.0));
  CHECK(cubic.eval_fprime(2.0) == doctest::Approx(4.0));

  const Nonlinearity quartic(4.0);
  CHECK(quartic.eval_f(1.5) == doctest::Approx(3.375).epsilon(1e-15));
  CHECK(quartic.eval_F(0.0) == 0.0);
  CHECK(quartic.eval_fprime(0.0) == 0.0);
}

TEST_CASE("non-finite arguments are domain errors") {
  const Nonlinearity nl(3.0);
  CHECK_THROWS_AS(nl.eval_f(NAN), Error);
  CHECK_THROWS_AS(nl.eval_F(INFINITY), Error);
  try {
    nl.eval_fprime(-INFINITY);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::domain);
  }
}

TEST_CASE("exponent validated at construction") {
  CHECK_THROWS_AS(Nonlinearity(1.5), Error);
  CHECK_THROWS_AS(Nonlinearity(2.0), Error);
  CHECK_THROWS_AS(Nonlinearity(6.0, 3), Error);  // 2N/(N-2) = 6
  CHECK_NOTHROW(Nonlinearity(5.9, 3));
  CHECK_NOTHROW(Nonlinearity(50.0, 2));
}

TEST_CASE("hypothesis report") {
  CHECK(validate_hypotheses(3.0, 2).all_passed());
  CHECK(validate_hypotheses(2.5, 2).all_passed());
  const auto bad = validate_hypotheses(1.5, 2);
  CHECK_FALSE(bad.all_passed());
  CHECK_FALSE(bad.checks.front().passed);
}

TEST_CASE("oddness, antiderivative and derivative consistency") {
  for (double p : {2.2, 2.5, 3.0, 4.0, 7.0}) {
    const Nonlinearity nl(p);
    for (int i = 0; i <= 200; ++i) {
      const double t = 0.1 * std::pow(100.0, i / 200.0);  // |t| in [0.1, 10]
      CHECK(nl.eval_f(-t) == -nl.eval_f(t));
      const double h = 1e-5 * t;
      const double dF = (nl.eval_F(t + h) - nl.eval_F(t - h)) / (2 * h);
      CHECK(std::abs(dF - nl.eval_f(t)) <= 1e-8 * std::abs(nl.eval_f(t)));
      const double df = (nl.eval_f(t + h) - nl.eval_f(t - h)) / (2 * h);
      CHECK(std::abs(df - nl.eval_fprime(t)) <= 1e-6 * nl.eval_fprime(t));
    }
  }
}
