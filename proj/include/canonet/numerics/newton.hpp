#pragma once

#include "canonet/core.hpp"

#include <functional>

namespace canonet {

using ResidualFn = std::function<VecX(const VecX&)>;

struct NewtonOptions {
  int max_iterations = 200;
  int max_halvings = 30;
  /// Forward-difference step is fd_step * max(1, |x_i|).
  double fd_step = 1e-7;
};

struct NewtonReport {
  VecX x;
  double residual_norm = 0;
  int iterations = 0;
};

/// Damped Newton with a finite-difference Jacobian. Returns a point whose
/// residual infinity-norm is <= tol, or throws ConvergenceError carrying the
/// best iterate seen.
NewtonReport solve_nonlinear_system_report(const ResidualFn& residual, const VecX& x0, double tol,
                                           const NewtonOptions& options = {});

inline VecX solve_nonlinear_system(const ResidualFn& residual, const VecX& x0, double tol,
                                   const NewtonOptions& options = {}) {
  return solve_nonlinear_system_report(residual, x0, tol, options).x;
}

}  // namespace canonet
