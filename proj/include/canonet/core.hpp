#pragma once

#include <Eigen/Core>

#include <complex>
#include <stdexcept>
#include <string>

namespace canonet {

using Index = Eigen::Index;

/// Points of the physical (z) and canonical (w) planes.
using Complex = std::complex<double>;
using ComplexPoint = Complex;

using VecX = Eigen::VectorXd;
using VecXc = Eigen::VectorXcd;
using VecXi = Eigen::VectorXi;
using MatX = Eigen::MatrixXd;

/// Invalid argument or a point outside an operation's domain.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Evaluation at a singular point of a map or a power sum.
class SingularityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Iterative solver gave up. Carries the best iterate and its residual norm.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, VecX best, double residual_norm)
      : std::runtime_error(what), best_(std::move(best)), residual_norm_(residual_norm) {}

  const VecX& best_iterate() const { return best_; }
  double residual_norm() const { return residual_norm_; }

 private:
  VecX best_;
  double residual_norm_;
};

/// Malformed scenario or serialized document.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace canonet
