#include "canonet/numerics/newton.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>

namespace canonet {

namespace {

double inf_norm(const VecX& v) {
  if (v.size() == 0) return 0;
  if (!v.allFinite()) return std::numeric_limits<double>::infinity();
  return v.cwiseAbs().maxCoeff();
}

}  // namespace

NewtonReport solve_nonlinear_system_report(const ResidualFn& residual, const VecX& x0, double tol,
                                           const NewtonOptions& options) {
  if (!(tol > 0)) throw DomainError("solve_nonlinear_system: tolerance must be positive");

  VecX x = x0;
  VecX r = residual(x);
  if (r.size() != x.size()) throw DomainError("solve_nonlinear_system: residual must be square");
  double norm = inf_norm(r);
  if (!std::isfinite(norm))
    throw ConvergenceError("solve_nonlinear_system: residual not finite at start", x, norm);

  const Index k = x.size();
  MatX jac(k, k);
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    if (norm <= tol) return {x, norm, iter};

    for (Index j = 0; j < k; ++j) {
      const double h = options.fd_step * std::max(1.0, std::abs(x(j)));
      VecX xp = x;
      xp(j) += h;
      jac.col(j) = (residual(xp) - r) / h;
    }
    const VecX step = jac.colPivHouseholderQr().solve(-r);
    if (!step.allFinite())
      throw ConvergenceError("solve_nonlinear_system: singular Jacobian", x, norm);

    double t = 1;
    bool improved = false;
    for (int h = 0; h <= options.max_halvings; ++h, t *= 0.5) {
      const VecX trial = x + t * step;
      const VecX rt = residual(trial);
      const double nt = inf_norm(rt);
      if (nt < norm) {
        x = trial;
        r = rt;
        norm = nt;
        improved = true;
        break;
      }
    }
    if (!improved)
      throw ConvergenceError("solve_nonlinear_system: line search stalled", x, norm);
  }
  if (norm <= tol) return {x, norm, options.max_iterations};
  throw ConvergenceError("solve_nonlinear_system: iteration cap exceeded", x, norm);
}

}  // namespace canonet
