#pragma once

// Polygon <-> rectangle conformal maps through the infinite strip
// S = {0 <= Im z <= 1}:
//
//   F^{-1} = f o g,   g : rectangle -> S,   f : S -> polygon,
//
// with g(w) = log(sn(u | m)) / pi on u = (2w - 1) K, and f the strip
// Schwarz-Christoffel integral with sinh factors. The four quadrilateral
// corners sit at i, 0, R, R + i of the strip; the elliptic parameter is
// m = exp(-2 pi R), so the conformal module is K'(m) / (2 K(m)).
//
// A module below one would squeeze 0 and R together (R ~ exp(-pi / 2m)), so
// such quadrilaterals are solved with the corner labels rotated by one and
// the rectangle turned a quarter turn to match.

#include "canonet/geometry.hpp"
#include "canonet/numerics/newton.hpp"
#include "canonet/numerics/quadrature.hpp"

#include <json.hpp>

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace canonet {

struct StripSolveOptions {
  /// Infinity-norm bound on the log side-length residuals.
  double tol = 1e-10;
  int nodes_per_panel = 12;
  NewtonOptions newton{};
};

/// Conformal module of the strip quadrilateral (S; 0, R, R+i, i).
double module_from_strip_length(double strip_length);
/// Inverse of module_from_strip_length.
double strip_length_from_module(double module);

class StripMap {
 public:
  /// Solve the parameter problem for q.
  static StripMap solve(const Quadrilateral& q, const StripSolveOptions& options = {});

  /// Rebuild from stored prevertices; throws ValidationError when they do
  /// not reproduce the polygon within check_tol (relative to its diameter).
  static StripMap from_prevertices(const Quadrilateral& q, const VecXc& prevertices,
                                   double strip_length, bool rotated = false,
                                   int nodes_per_panel = 12, double check_tol = 1e-8);

  /// The quadrilateral as given by the caller.
  const Quadrilateral& quadrilateral() const { return user_quad_; }
  /// The labelling actually placed on the strip (rotated or not).
  const Quadrilateral& strip_quadrilateral() const { return quad_; }
  bool rotated() const { return rotated_; }
  const Polygon& polygon() const { return quad_.polygon(); }
  /// z_k; real part along the strip, imaginary part 0 (bottom) or 1 (top).
  const VecXc& prevertices() const { return prevertices_; }
  double strip_length() const { return strip_length_; }
  /// m(Q) of the caller's quadrilateral.
  double module() const { return rotated_ ? 1 / module_ : module_; }
  /// Module of the strip quadrilateral, K'/(2K); at least one when rotated.
  double strip_module() const { return module_; }
  double elliptic_parameter() const { return m_; }
  double elliptic_complement() const { return mc_; }
  double quarter_period() const { return big_k_; }
  double complementary_quarter_period() const { return big_kp_; }
  Complex constant_a() const { return const_a_; }
  Complex constant_c() const { return const_c_; }
  /// f(z_k) as evaluated by the solved map.
  const VecXc& vertex_images() const { return vertex_images_; }
  /// max_k |f(z_k) - w_k| / diam(polygon).
  double vertex_error() const { return vertex_error_; }
  double residual_norm() const { return residual_norm_; }
  int nodes_per_panel() const { return rule_legendre_.size(); }
  const std::vector<std::string>& warnings() const { return warnings_; }

  /// Integrand prod_k sinh(pi/2 (z - z_k))^(alpha_k - 1), principal branches
  /// continuous on the closed strip.
  Complex integrand(Complex z) const;
  Complex log_integrand(Complex z) const;

  /// Integral of the integrand along the segment za -> zb. sa, sb name the
  /// prevertex sitting at an endpoint, or -1.
  Complex integrate(Complex za, Index sa, Complex zb, Index sb) const;

  /// f(z); z = -inf / +inf (real part) give the images of the strip ends.
  Complex evaluate(Complex z) const;
  Complex derivative(Complex z) const { return const_c_ * integrand(z); }

 private:
  StripMap(const Quadrilateral& q, bool rotated, VecXc prevertices, double strip_length, int nodes);

  void finalize(Index reference_side);
  Complex side_integral(Index j) const;
  Complex jacobi_panel(Complex za, Complex zb, Index s) const;
  Complex legendre_panel(Complex za, Complex zb) const;
  double distance_to_prevertices(Complex p, Index skip) const;
  Complex end_integral(Complex z, bool left) const;

  Quadrilateral user_quad_;
  Quadrilateral quad_;
  bool rotated_ = false;
  VecXc prevertices_;
  VecX exponents_;
  double strip_length_ = 0;
  double m_ = 0;
  double mc_ = 1;
  double big_k_ = 0;
  double big_kp_ = 0;
  double module_ = 0;
  double xmin_ = 0;
  double xmax_ = 0;
  Complex const_a_{};
  Complex const_c_{};
  VecXc vertex_images_;
  // Interior integration bases on a regular strip grid: x = base_x0_ + i * kBaseStep,
  // y = (j + 1/2) / kBaseRows, stored row-major.
  double base_x0_ = 0;
  Index base_nx_ = 0;
  VecXc base_images_;
  Complex left_end_{};
  Complex right_end_{};
  double vertex_error_ = 0;
  double residual_norm_ = 0;
  std::vector<std::string> warnings_;
  QuadratureRuleD rule_legendre_;
  std::vector<QuadratureRuleD> rule_jacobi_;
};

/// Parameter problem front end: throws ConvergenceError on failure.
StripMap solve_strip_parameters(const Quadrilateral& q, double tol = 1e-10);

/// m(Q); rotating the corner labels by one gives 1 / m(Q).
double conformal_module(const Quadrilateral& q);

/// g on the normalized rectangle [0,1] x [0, m(Q)]: corners 0, 1, 1 + i m(Q),
/// i m(Q) go to the strip images of the caller's corners 0..3 (i, 0, R, R + i
/// unless the map is rotated).
Complex rect_to_strip(Complex w, const StripMap& sm);
/// dg/dw on the normalized rectangle.
Complex rect_to_strip_derivative(Complex w, const StripMap& sm);

/// f: strip -> polygon.
Complex strip_to_polygon(Complex z, const StripMap& sm);

struct ForwardSolution {
  Complex w;
  double residual = 0;
  int iterations = 0;
  bool near_boundary = false;
};

/// F and F^{-1} between the polygon and a W x H rectangle with H / W = m(Q).
class ConformalMapPair {
 public:
  /// width <= 0 picks W so that W * H equals the polygon area.
  explicit ConformalMapPair(std::shared_ptr<const StripMap> strip_map, double width = 0,
                            int guess_grid = 40);

  const StripMap& strip_map() const { return *strip_map_; }
  std::shared_ptr<const StripMap> strip_map_ptr() const { return strip_map_; }
  const RectangleDomain& rectangle() const { return rect_; }
  const Polygon& polygon() const { return strip_map_->polygon(); }

  /// F^{-1}(w) for w in the closed rectangle.
  Complex inverse(Complex w) const;
  /// d F^{-1} / dw for w strictly inside.
  Complex derivative(Complex w) const;
  /// F(zeta) by Newton on F^{-1}; tol is relative to the polygon diameter.
  ForwardSolution forward(Complex zeta, double tol = 1e-8,
                          std::optional<Complex> guess = std::nullopt) const;

  /// Rectangle corner k (0: origin, counterclockwise).
  Complex corner(int k) const;

 private:
  std::shared_ptr<const StripMap> strip_map_;
  RectangleDomain rect_;
  VecXc guess_w_;
  VecXc guess_z_;
};

Complex map_inverse(Complex w, const ConformalMapPair& cm);
Complex map_derivative(Complex w, const ConformalMapPair& cm);
/// Throws ConvergenceError when Newton fails.
Complex map_forward(Complex zeta, const ConformalMapPair& cm, double tol = 1e-8);

/// Versioned JSON document for caching the parameter solve.
nlohmann::json strip_map_to_json(const StripMap& sm);
/// Revalidates the stored map against its polygon; throws ValidationError.
StripMap strip_map_from_json(const nlohmann::json& doc);

}  // namespace canonet
