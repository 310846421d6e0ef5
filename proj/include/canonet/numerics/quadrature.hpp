#pragma once

#include "canonet/core.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <utility>

namespace canonet {

/// Gauss rule on [-1, 1] for the weight (1 - x)^a (1 + x)^b.
template <typename Scalar>
struct QuadratureRule {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> nodes;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> weights;
  std::pair<Scalar, Scalar> endpoint_exponents{0, 0};

  Index size() const { return nodes.size(); }

  /// Sum of weights times f(nodes); f may return real or complex values.
  template <typename F>
  auto apply(F&& f) const {
    decltype(f(nodes(0))) acc{};
    for (Index j = 0; j < nodes.size(); ++j) acc += weights(j) * f(nodes(j));
    return acc;
  }
};

using QuadratureRuleD = QuadratureRule<double>;

/// Golub-Welsch: eigen-decomposition of the symmetric Jacobi matrix of the
/// monic Jacobi recurrence.
template <typename Scalar>
QuadratureRule<Scalar> gauss_jacobi_rule(int n, Scalar alpha_exp, Scalar beta_exp) {
  if (n < 1) throw DomainError("gauss_jacobi_rule: need at least one node");
  if (!(alpha_exp > Scalar(-1) && beta_exp > Scalar(-1)))
    throw DomainError("gauss_jacobi_rule: endpoint exponents must exceed -1");

  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const Scalar a = alpha_exp;
  const Scalar b = beta_exp;
  const Scalar ab = a + b;

  Mat jacobi = Mat::Zero(n, n);
  jacobi(0, 0) = (b - a) / (ab + 2);
  for (int k = 1; k < n; ++k) {
    const Scalar s = 2 * k + ab;
    jacobi(k, k) = (b * b - a * a) / (s * (s + 2));
    Scalar beta_k;
    if (k == 1) {
      beta_k = 4 * (1 + a) * (1 + b) / ((2 + ab) * (2 + ab) * (3 + ab));
    } else {
      beta_k = 4 * k * (k + a) * (k + b) * (k + ab) / (s * s * (s + 1) * (s - 1));
    }
    jacobi(k, k - 1) = jacobi(k - 1, k) = std::sqrt(beta_k);
  }

  const Scalar mu0 = std::exp((ab + 1) * std::log(Scalar(2)) + std::lgamma(a + 1) +
                              std::lgamma(b + 1) - std::lgamma(ab + 2));

  Eigen::SelfAdjointEigenSolver<Mat> solver(jacobi);
  QuadratureRule<Scalar> rule;
  rule.nodes = solver.eigenvalues();
  rule.weights = mu0 * solver.eigenvectors().row(0).transpose().array().square();
  rule.endpoint_exponents = {a, b};
  return rule;
}

template <typename Scalar>
QuadratureRule<Scalar> gauss_legendre_rule(int n) {
  return gauss_jacobi_rule<Scalar>(n, Scalar(0), Scalar(0));
}

}  // namespace canonet
