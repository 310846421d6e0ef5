#include "canonet/numerics/elliptic.hpp"
#include "canonet/numerics/newton.hpp"
#include "canonet/numerics/quadrature.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <random>

using namespace canonet;

TEST_CASE("complete elliptic K against high-precision values") {
  CHECK(complete_elliptic_k(0.0) == doctest::Approx(std::numbers::pi / 2).epsilon(1e-15));
  CHECK(std::abs(complete_elliptic_k(0.5) - 1.8540746773013719) < 1e-14);
  CHECK(std::abs(complete_elliptic_k(0.9) - 2.5780921133481733) < 1e-14);
  CHECK_THROWS_AS(complete_elliptic_k(1.0), DomainError);
  CHECK_THROWS_AS(complete_elliptic_k(-0.1), DomainError);
}

TEST_CASE("incomplete elliptic F") {
  CHECK(std::abs(incomplete_elliptic_f(0.7, 0.3) - 0.71651771598539313) < 1e-14);
  CHECK(std::abs(incomplete_elliptic_f(1.4, 0.95) - 2.2014637420602197) < 1e-13);
  CHECK(incomplete_elliptic_f(std::numbers::pi / 2, 0.5) == complete_elliptic_k(0.5));
  CHECK_THROWS_AS(incomplete_elliptic_f(-0.7, 0.3), DomainError);
  CHECK_THROWS_AS(incomplete_elliptic_f(0.7, 1.0), DomainError);
  CHECK(incomplete_elliptic_f(0.4, 0.0) == doctest::Approx(0.4).epsilon(1e-15));

  std::mt19937 rng(11);
  std::uniform_real_distribution<double> phi(0.0, std::numbers::pi / 2), m(0.0, 0.98);
  for (int i = 0; i < 30; ++i) {
    const double p = phi(rng), mm = m(rng);
    CHECK(std::abs(incomplete_elliptic_f(p, mm) - oracle::elliptic_f(p, mm)) < 1e-11);
  }
}

TEST_CASE("Jacobi functions at real argument") {
  const auto t = jacobi_sncndn(0.6, 0.4);
  CHECK(std::abs(t.sn - 0.55359138472020458) < 1e-14);
  CHECK(std::abs(t.cn - 0.83278843577679826) < 1e-14);
  CHECK(std::abs(t.dn - 0.93670413232003336) < 1e-14);
  CHECK(std::abs(jacobi_sn(2.5, 0.8) - 0.99401801921871436) < 1e-13);
  CHECK(jacobi_sn(complete_elliptic_k(0.3), 0.3) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(jacobi_sn(0.7, 0.0) == doctest::Approx(std::sin(0.7)).epsilon(1e-15));
  CHECK_THROWS_AS(jacobi_sn(0.3, 1.2), DomainError);
}

TEST_CASE("Jacobi identities hold for random arguments") {
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(-8, 8), m(0.0, 0.99);
  for (int i = 0; i < 200; ++i) {
    const double uu = u(rng), mm = m(rng);
    const auto t = jacobi_sncndn(uu, mm);
    CHECK(std::abs(t.sn * t.sn + t.cn * t.cn - 1) < 1e-13);
    CHECK(std::abs(t.dn * t.dn + mm * t.sn * t.sn - 1) < 1e-13);
    // sn is odd and 4K periodic.
    CHECK(std::abs(jacobi_sn(-uu, mm) + t.sn) < 1e-13);
    CHECK(std::abs(jacobi_sn(uu + 4 * complete_elliptic_k(mm), mm) - t.sn) < 1e-11);
  }
}

TEST_CASE("sn matches the inverse of F") {
  std::mt19937 rng(17);
  std::uniform_real_distribution<double> frac(-1, 1), m(0.0, 0.99);
  for (int i = 0; i < 25; ++i) {
    const double mm = m(rng);
    const double uu = frac(rng) * complete_elliptic_k(mm);
    CHECK(std::abs(jacobi_sn(uu, mm) - oracle::sn_by_inversion(uu, mm)) < 1e-9);
  }
}

TEST_CASE("Jacobi functions at complex argument") {
  const auto t = jacobi_sncndn(Complex(0.3, 0.7), 0.6, 0.4);
  CHECK(std::abs(t.sn - Complex(0.42980998414266237, 0.72762343123559418)) < 1e-14);
  CHECK(std::abs(t.cn - Complex(1.1890648457906511, -0.26301325495267552)) < 1e-14);
  CHECK(std::abs(t.dn - Complex(1.1114505869539751, -0.16882791863826734)) < 1e-14);

  // sn(u + i K') = 1 / (k sn u).
  const double m = 0.3;
  const double kp = complete_elliptic_k(1 - m);
  const double u = 0.45;
  const auto shifted = jacobi_sncndn(Complex(u, kp), m, 1 - m);
  CHECK(std::abs(shifted.sn - 1.0 / (std::sqrt(m) * jacobi_sn(u, m))) < 1e-12);
}

TEST_CASE("Gauss-Jacobi rules are exact on weighted polynomials") {
  for (double b : {-0.5, -0.25, 0.0, 0.5, 1.0 / 3.0}) {
    const auto rule = gauss_jacobi_rule<double>(8, 0.0, b);
    CHECK(rule.size() == 8);
    for (int j = 0; j < 16; ++j) {
      // int_{-1}^{1} (1+x)^b (1+x)^j dx = 2^(b+j+1) / (b+j+1).
      const double exact = std::pow(2.0, b + j + 1) / (b + j + 1);
      const double got = rule.apply([j](double x) { return std::pow(1 + x, j); });
      CHECK(got == doctest::Approx(exact).epsilon(1e-12));
    }
  }
  const auto both = gauss_jacobi_rule<double>(10, -0.5, -0.5);
  CHECK(both.apply([](double) { return 1.0; }) == doctest::Approx(std::numbers::pi).epsilon(1e-13));
  CHECK_THROWS_AS(gauss_jacobi_rule<double>(0, 0.0, 0.0), DomainError);
  CHECK_THROWS_AS(gauss_jacobi_rule<double>(4, 0.0, -1.0), DomainError);
}

TEST_CASE("Gauss-Legendre nodes are symmetric and sum weights to two") {
  const auto rule = gauss_legendre_rule<double>(12);
  CHECK(rule.weights.sum() == doctest::Approx(2.0).epsilon(1e-14));
  for (Index j = 0; j < rule.size(); ++j)
    CHECK(std::abs(rule.nodes(j) + rule.nodes(rule.size() - 1 - j)) < 1e-14);
  CHECK(rule.apply([](double x) { return std::exp(x); }) ==
        doctest::Approx(std::exp(1.0) - std::exp(-1.0)).epsilon(1e-15));
}

TEST_CASE("Newton solves a smooth system and reports failure") {
  const ResidualFn circle = [](const VecX& x) {
    VecX r(2);
    r << x(0) * x(0) + x(1) * x(1) - 4, x(0) - x(1);
    return r;
  };
  VecX x0(2);
  x0 << 1, 0.5;
  const VecX x = solve_nonlinear_system(circle, x0, 1e-12);
  CHECK(x(0) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-10));
  CHECK(x(1) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-10));

  const ResidualFn no_root = [](const VecX& x) {
    VecX r(1);
    r << x(0) * x(0) + 1;
    return r;
  };
  VecX y0(1);
  y0 << 0.3;
  try {
    solve_nonlinear_system(no_root, y0, 1e-12);
    FAIL("expected ConvergenceError");
  } catch (const ConvergenceError& e) {
    CHECK(e.best_iterate().size() == 1);
    CHECK(e.residual_norm() >= 1.0);
  }
}
