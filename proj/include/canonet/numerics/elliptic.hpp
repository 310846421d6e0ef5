#pragma once

// Complete and incomplete elliptic integrals of the first kind and the Jacobi
// elliptic functions sn, cn, dn. Everything is parameterized by m = k^2 and,
// where cancellation matters, also by the complementary parameter mc = 1 - m
// so that callers holding mc exactly (e.g. m = exp(-2 pi R) for long strips)
// do not lose digits forming 1 - m.

#include "canonet/core.hpp"

#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>

namespace canonet {

template <typename Scalar>
struct JacobiTriple {
  Scalar sn;
  Scalar cn;
  Scalar dn;
};

namespace detail {

template <typename Scalar>
void check_parameter(Scalar m, const char* who) {
  if (!(m >= Scalar(0) && m < Scalar(1)))
    throw DomainError(std::string(who) + ": elliptic parameter must lie in [0,1)");
}

}  // namespace detail

/// Arithmetic-geometric mean of two non-negative numbers.
template <typename Scalar>
Scalar agm(Scalar a, Scalar b) {
  const Scalar tol = std::numeric_limits<Scalar>::epsilon();
  for (int it = 0; it < 64 && std::abs(a - b) > tol * a; ++it) {
    const Scalar next = (a + b) / 2;
    b = std::sqrt(a * b);
    a = next;
  }
  return (a + b) / 2;
}

/// K from the complementary parameter: K = pi / (2 agm(1, sqrt(mc))).
template <typename Scalar>
Scalar complete_elliptic_k_from_complement(Scalar mc) {
  if (!(mc > Scalar(0) && mc <= Scalar(1)))
    throw DomainError("complete_elliptic_k: complementary parameter must lie in (0,1]");
  return std::numbers::pi_v<Scalar> / (2 * agm(Scalar(1), std::sqrt(mc)));
}

/// Complete elliptic integral of the first kind K(m).
template <typename Scalar>
Scalar complete_elliptic_k(Scalar m) {
  detail::check_parameter(m, "complete_elliptic_k");
  return complete_elliptic_k_from_complement(Scalar(1) - m);
}

/// Incomplete elliptic integral F(phi | m) = int_0^phi dt / sqrt(1 - m sin^2 t),
/// by descending Landen transformations (AGM with phase doubling).
template <typename Scalar>
Scalar incomplete_elliptic_f(Scalar phi, Scalar m) {
  detail::check_parameter(m, "incomplete_elliptic_f");
  const Scalar half_pi = std::numbers::pi_v<Scalar> / 2;
  if (!(phi >= Scalar(0) && phi <= half_pi))
    throw DomainError("incomplete_elliptic_f: amplitude must lie in [0, pi/2]");
  if (phi == Scalar(0)) return Scalar(0);
  if (phi == half_pi) return complete_elliptic_k(m);

  const Scalar two_pi = 2 * std::numbers::pi_v<Scalar>;
  const Scalar tol = std::numeric_limits<Scalar>::epsilon();
  Scalar a = 1;
  Scalar b = std::sqrt(Scalar(1) - m);
  Scalar scale = 1;
  for (int it = 0; it < 64 && std::abs(a - b) > tol * a; ++it) {
    // tan(phi_next - phi) = (b/a) tan(phi), taking the branch continuous in phi.
    const Scalar turn = std::atan2(b * std::sin(phi), a * std::cos(phi));
    phi += turn + two_pi * std::round((phi - turn) / two_pi);
    const Scalar next = (a + b) / 2;
    b = std::sqrt(a * b);
    a = next;
    scale *= 2;
  }
  return phi / (scale * (a + b) / 2);
}

/// Real-argument sn, cn, dn with explicit parameter and complement
/// (Bulirsch's descending Landen scheme).
template <typename Scalar>
JacobiTriple<Scalar> jacobi_sncndn(Scalar u, Scalar m, Scalar mc) {
  if (m == Scalar(0)) return {std::sin(u), std::cos(u), Scalar(1)};
  if (mc == Scalar(0)) {
    const Scalar sech = 1 / std::cosh(u);
    return {std::tanh(u), sech, sech};
  }
  constexpr int kMaxLevels = 48;
  std::array<Scalar, kMaxLevels> em{};
  std::array<Scalar, kMaxLevels> en{};
  const Scalar ca = std::sqrt(std::numeric_limits<Scalar>::epsilon());

  Scalar a = 1;
  Scalar c = 1;
  Scalar emc = mc;
  int levels = 0;
  for (int i = 0; i < kMaxLevels; ++i) {
    levels = i;
    em[i] = a;
    emc = std::sqrt(emc);
    en[i] = emc;
    c = (a + emc) / 2;
    if (std::abs(a - emc) <= ca * a) break;
    emc *= a;
    a = c;
  }
  u *= c;
  Scalar sn = std::sin(u);
  Scalar cn = std::cos(u);
  Scalar dn = 1;
  if (sn != Scalar(0)) {
    a = cn / sn;
    c *= a;
    for (int ii = levels; ii >= 0; --ii) {
      const Scalar b = em[ii];
      a *= c;
      c *= dn;
      dn = (en[ii] + a) / (b + a);
      a = c / b;
    }
    a = 1 / std::sqrt(c * c + 1);
    sn = sn >= 0 ? a : -a;
    cn = c * sn;
  }
  return {sn, cn, dn};
}

template <typename Scalar>
JacobiTriple<Scalar> jacobi_sncndn(Scalar u, Scalar m) {
  detail::check_parameter(m, "jacobi_sncndn");
  return jacobi_sncndn(u, m, Scalar(1) - m);
}

/// sn(kappa | m); the inverse of the amplitude relation kappa = F(phi | m).
template <typename Scalar>
Scalar jacobi_sn(Scalar kappa, Scalar m) {
  detail::check_parameter(m, "jacobi_sn");
  return jacobi_sncndn(kappa, m, Scalar(1) - m).sn;
}

/// Complex-argument sn, cn, dn via the addition theorem, combining real
/// arguments at parameters m and mc.
template <typename Scalar>
JacobiTriple<std::complex<Scalar>> jacobi_sncndn(std::complex<Scalar> u, Scalar m, Scalar mc) {
  using C = std::complex<Scalar>;
  const auto r = jacobi_sncndn(u.real(), m, mc);
  const auto i = jacobi_sncndn(u.imag(), mc, m);
  const Scalar denom = i.cn * i.cn + m * r.sn * r.sn * i.sn * i.sn;
  return {C(r.sn * i.dn, r.cn * r.dn * i.sn * i.cn) / denom,
          C(r.cn * i.cn, -r.sn * r.dn * i.sn * i.dn) / denom,
          C(r.dn * i.cn * i.dn, -m * r.sn * r.cn * i.sn) / denom};
}

}  // namespace canonet
