#include "canonet/scmap.hpp"

#include "canonet/numerics/elliptic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace canonet {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kLn2 = std::numbers::ln2;
constexpr double kMaxPanel = 0.5;
const Complex kI{0.0, 1.0};

// exp(z) - 1 without cancellation near z = 0.
Complex expm1c(Complex z) {
  const double s = std::sin(z.imag() / 2);
  return {std::expm1(z.real()) * std::cos(z.imag()) - 2 * s * s,
          std::exp(z.real()) * std::sin(z.imag())};
}

// log(-i sinh t) for 0 <= Im t <= pi/2 (principal branch, continuous there).
Complex log_rot_sinh(Complex t) {
  if (t.real() >= 0) return t - kLn2 - kI * (kPi / 2) + std::log(-expm1c(-2.0 * t));
  return -t - kLn2 + kI * (kPi / 2) + std::log(-expm1c(2.0 * t));
}

// log sinh(pi/2 (y - z_k)) on the closed strip, arg continuous and in
// [0, pi] for a bottom prevertex, [-pi, 0] for a top one.
Complex log_sinh_factor(Complex y, Complex zk) {
  const Complex t = (kPi / 2) * (y - Complex(zk.real(), 0.0));
  if (zk.imag() == 0) return kI * (kPi / 2) + log_rot_sinh(t);
  // Top prevertex: tau = t - i pi/2 has -pi/2 <= Im tau <= 0.
  const Complex tau = t - kI * (kPi / 2);
  return -kI * (kPi / 2) + std::conj(log_rot_sinh(std::conj(tau)));
}

// Principal-range logs with the argument pinned to [0, pi] or [-pi, 0].
Complex log_upper(Complex s) {
  double arg = std::atan2(s.imag(), s.real());
  if (arg < 0) arg = arg < -kPi / 2 ? kPi : 0.0;
  return {std::log(std::abs(s)), arg};
}

Complex log_lower(Complex s) {
  double arg = std::atan2(s.imag(), s.real());
  if (arg > 0) arg = arg > kPi / 2 ? -kPi : 0.0;
  return {std::log(std::abs(s)), arg};
}

struct ArcPlan {
  // Vertices strictly between corner a and corner a+1, counterclockwise.
  std::array<std::vector<Index>, 4> arcs;
};

ArcPlan make_arc_plan(const Quadrilateral& q) {
  ArcPlan plan;
  const Polygon& p = q.polygon();
  for (int a = 0; a < 4; ++a) {
    for (Index k = q.corner(a) + 1;; ++k) {
      const Index v = p.wrap(k);
      if (v == q.corner(a + 1)) break;
      plan.arcs[static_cast<std::size_t>(a)].push_back(v);
    }
  }
  return plan;
}

// Unknowns: log R, then per arc one log-gap per interior vertex (the final
// gap of each arc is pinned to 1).
VecXc place_prevertices(const VecX& params, const ArcPlan& plan, const Quadrilateral& q,
                        double& strip_length) {
  const Index n = q.polygon().size();
  const double r = std::exp(params(0));
  strip_length = r;
  VecXc z(n);
  z(q.corner(0)) = Complex(0, 1);
  z(q.corner(1)) = Complex(0, 0);
  z(q.corner(2)) = Complex(r, 0);
  z(q.corner(3)) = Complex(r, 1);

  Index off = 1;
  for (int a = 0; a < 4; ++a) {
    const auto& arc = plan.arcs[static_cast<std::size_t>(a)];
    const Index k = static_cast<Index>(arc.size());
    if (k == 0) continue;
    const VecX logs = params.segment(off, k);
    const double shift = std::max(0.0, logs.maxCoeff());
    VecX gaps(k + 1);
    gaps.head(k) = (logs.array() - shift).exp();
    gaps(k) = std::exp(-shift);
    const double total = gaps.sum();
    double head = 0;
    for (Index i = 0; i < k; ++i) {
      head += gaps(i);
      const double f = head / total;
      const double g = gaps.tail(k - i).sum() / total;  // 1 - f
      Complex zi;
      switch (a) {
        case 0:
          zi = f < 0.5 ? Complex(std::log1p(-2 * f) / kPi, 1) : Complex(std::log1p(-2 * g) / kPi, 0);
          break;
        case 1:
          zi = Complex(r * f, 0);
          break;
        case 2:
          zi = f < 0.5 ? Complex(r - std::log1p(-2 * f) / kPi, 0)
                       : Complex(r - std::log1p(-2 * g) / kPi, 1);
          break;
        default:
          zi = Complex(r * g, 1);
          break;
      }
      z(arc[static_cast<std::size_t>(i)]) = zi;
    }
    off += k;
  }
  return z;
}

// Module estimate from the arc lengths of the four sides.
double initial_module(const ArcPlan& plan, const Quadrilateral& q) {
  const Polygon& p = q.polygon();
  std::array<double, 4> len{};
  for (int a = 0; a < 4; ++a) {
    Index prev = q.corner(a);
    for (Index v : plan.arcs[static_cast<std::size_t>(a)]) {
      len[static_cast<std::size_t>(a)] += std::abs(p.vertex(v) - p.vertex(prev));
      prev = v;
    }
    len[static_cast<std::size_t>(a)] += std::abs(p.vertex(q.corner(a + 1)) - p.vertex(prev));
  }
  return (len[1] + len[3]) / (len[0] + len[2]);
}

VecX initial_parameters(const ArcPlan& plan, const Quadrilateral& q) {
  const Polygon& p = q.polygon();
  VecX params(p.size() - 3);
  Index off = 1;
  for (int a = 0; a < 4; ++a) {
    const auto& arc = plan.arcs[static_cast<std::size_t>(a)];
    std::vector<double> steps;
    Index prev = q.corner(a);
    for (Index v : arc) {
      steps.push_back(std::abs(p.vertex(v) - p.vertex(prev)));
      prev = v;
    }
    steps.push_back(std::abs(p.vertex(q.corner(a + 1)) - p.vertex(prev)));
    double total = 0;
    for (double s : steps) total += s;
    // Arc-length fractions; on the end arcs fraction 1/2 is the strip end
    // itself, so vertices are kept a little away from it.
    std::vector<double> frac{0.0};
    for (std::size_t i = 0; i + 1 < steps.size(); ++i) frac.push_back(frac.back() + steps[i] / total);
    frac.push_back(1.0);
    if (a == 0 || a == 2) {
      for (std::size_t i = 1; i + 1 < frac.size(); ++i)
        if (std::abs(frac[i] - 0.5) < 0.02) frac[i] = frac[i] < 0.5 ? 0.48 : 0.52;
      std::sort(frac.begin(), frac.end());
    }
    const double last = frac.back() - frac[frac.size() - 2];
    for (std::size_t i = 1; i + 1 < frac.size(); ++i)
      params(off++) = std::log(std::max(frac[i] - frac[i - 1], 1e-6) / std::max(last, 1e-6));
  }
  params(0) = std::log(strip_length_from_module(initial_module(plan, q)));
  return params;
}

// The two sides around the most distorted vertex are left free; the side
// after them is the reference length.
Index reference_side(const Polygon& p) {
  const VecX dev = (p.angle_fractions().array() - 1.0).abs();
  Index v = 0;
  dev.maxCoeff(&v);
  return p.wrap(v + 1);
}

std::vector<Index> condition_sides(const Polygon& p, Index ref) {
  std::vector<Index> sides;
  for (Index j = 0; j < p.size(); ++j) {
    const Index off = p.wrap(j - ref);
    if (off == 0 || off == p.size() - 1 || off == p.size() - 2) continue;
    sides.push_back(j);
  }
  return sides;
}

}  // namespace

double module_from_strip_length(double strip_length) {
  if (!(strip_length > 0) || !std::isfinite(strip_length))
    throw DomainError("module_from_strip_length: strip length must be positive");
  const double mc = -std::expm1(-2 * kPi * strip_length);
  const double k = complete_elliptic_k_from_complement(mc);
  const double kp = kPi / (2 * agm(1.0, std::exp(-kPi * strip_length)));
  return kp / (2 * k);
}

double strip_length_from_module(double module) {
  if (!(module > 0) || !std::isfinite(module))
    throw DomainError("strip_length_from_module: module must be positive");
  double lo = -40, hi = 40;  // bracket in log R
  for (int it = 0; it < 200 && hi - lo > 1e-15 * std::max(1.0, std::abs(hi)); ++it) {
    const double mid = (lo + hi) / 2;
    (module_from_strip_length(std::exp(mid)) < module ? lo : hi) = mid;
  }
  return std::exp((lo + hi) / 2);
}

StripMap::StripMap(const Quadrilateral& q, bool rotated, VecXc prevertices, double strip_length,
                   int nodes)
    : user_quad_(q),
      quad_(rotated ? q.rotated() : q),
      rotated_(rotated),
      prevertices_(std::move(prevertices)),
      strip_length_(strip_length) {
  if (nodes < 2) throw DomainError("StripMap: at least two quadrature nodes per panel");
  const Polygon& p = quad_.polygon();
  exponents_ = p.angle_fractions().array() - 1.0;
  rule_legendre_ = gauss_legendre_rule<double>(nodes);
  rule_jacobi_.reserve(static_cast<std::size_t>(p.size()));
  for (Index k = 0; k < p.size(); ++k)
    rule_jacobi_.push_back(gauss_jacobi_rule<double>(nodes, 0.0, exponents_(k)));
  for (Index k = 0; k < p.size(); ++k) {
    if (p.angle_fraction(k) < 0.05 || p.angle_fraction(k) > 1.95)
      warnings_.push_back("vertex " + std::to_string(k) +
                          " has an extreme angle; expect reduced accuracy near it");
  }
}

Complex StripMap::log_integrand(Complex z) const {
  // Away from a prevertex exp(-+2t) factors into a real exponential and a
  // phase shared by all prevertices, which saves most of the trig calls.
  const Complex phase = std::polar(1.0, -kPi * z.imag());
  Complex acc = 0;
  for (Index k = 0; k < prevertices_.size(); ++k) {
    if (exponents_(k) == 0) continue;
    const Complex zk = prevertices_(k);
    const Complex t = (kPi / 2) * (z - Complex(zk.real(), 0.0));
    if (std::norm(t) < 0.01) {
      acc += exponents_(k) * log_sinh_factor(z, zk);
      continue;
    }
    const bool right = t.real() >= 0;
    const double mag = std::exp(-2 * std::abs(t.real()));
    // Right: exp(-2t) = mag * phase; left: exp(2t) = mag * conj(phase). A top
    // prevertex works with conj(t) + i pi/2, which conjugates and negates.
    Complex e = right ? mag * phase : mag * std::conj(phase);
    Complex lt = t;
    if (zk.imag() != 0) {
      e = -std::conj(e);
      lt = std::conj(t) + kI * (kPi / 2);
    }
    Complex v = right ? lt - kLn2 - kI * (kPi / 2) : -lt - kLn2 + kI * (kPi / 2);
    v += std::log(1.0 - e);
    acc += exponents_(k) * (zk.imag() == 0 ? kI * (kPi / 2) + v : -kI * (kPi / 2) + std::conj(v));
  }
  return acc;
}

Complex StripMap::integrand(Complex z) const { return std::exp(log_integrand(z)); }

double StripMap::distance_to_prevertices(Complex p, Index skip) const {
  double d = std::numeric_limits<double>::infinity();
  for (Index k = 0; k < prevertices_.size(); ++k)
    if (k != skip) d = std::min(d, std::abs(prevertices_(k) - p));
  return d;
}

Complex StripMap::legendre_panel(Complex za, Complex zb) const {
  const Complex mid = (za + zb) / 2.0, half = (zb - za) / 2.0;
  return half * rule_legendre_.apply([&](double x) { return integrand(mid + half * x); });
}

Complex StripMap::jacobi_panel(Complex za, Complex zb, Index s) const {
  const Complex half = (zb - za) / 2.0;
  const double e = exponents_(s);
  const auto& rule = rule_jacobi_[static_cast<std::size_t>(s)];
  return half * rule.apply([&](double x) {
    return std::exp(log_integrand(za + half * (1.0 + x)) - e * std::log1p(x));
  });
}

Complex StripMap::integrate(Complex za, Index sa, Complex zb, Index sb) const {
  if (za == zb) return 0;
  if (sa >= 0 && sb >= 0) {
    const Complex mid = (za + zb) / 2.0;
    return integrate(za, sa, mid, -1) - integrate(zb, sb, mid, -1);
  }
  if (sb >= 0) return -integrate(zb, sb, za, -1);

  const double length = std::abs(zb - za);
  const Complex dir = (zb - za) / length;
  Complex total = 0;
  Complex cur = za;
  double remaining = length;
  if (sa >= 0) {
    const double len = std::min({remaining, distance_to_prevertices(za, sa) / 2, kMaxPanel});
    const Complex next = len == remaining ? zb : za + len * dir;
    total += jacobi_panel(za, next, sa);
    cur = next;
    remaining -= len;
  }
  while (remaining > 0) {
    const double d = distance_to_prevertices(cur, -1);
    if (!std::isfinite(d) || !std::isfinite(remaining))
      throw DomainError("StripMap::integrate: non-finite path");
    if (d < 1e-14) throw SingularityError("StripMap::integrate: path runs through a prevertex");
    double len = std::min({remaining, d / 2, kMaxPanel});
    if (remaining - len < 1e-14 * length) len = remaining;
    const Complex next = len == remaining ? zb : cur + len * dir;
    total += legendre_panel(cur, next);
    cur = next;
    remaining -= len;
  }
  return total;
}

Complex StripMap::side_integral(Index j) const {
  const Index n = prevertices_.size();
  const Index k = (j + 1) % n;
  return integrate(prevertices_(j), j, prevertices_(k), k);
}

// Integral of the integrand from the strip end (left or right) to z, in the
// variable zeta = exp(+-pi (y - x_end)) where the end is a regular point.
Complex StripMap::end_integral(Complex z, bool left) const {
  const double sign = left ? 1.0 : -1.0;
  const double x_end = left ? xmin_ : xmax_;
  const Complex zeta_z = std::exp(sign * kPi * (z - x_end));
  const Complex half = zeta_z / 2.0;
  return half * rule_legendre_.apply([&](double x) {
    const Complex zeta = half * (1.0 + x);
    const Complex logz = sign > 0 ? log_upper(zeta) : log_lower(zeta);
    const Complex y = x_end + sign * logz / kPi;
    return sign * std::exp(log_integrand(y) - logz) / kPi;
  });
}

namespace {

constexpr double kBaseStep = 0.125;
constexpr Index kBaseRows = 4;

Complex base_point(double x0, Index i, Index j) {
  return {x0 + double(i) * kBaseStep, (double(j) + 0.5) / double(kBaseRows)};
}

}  // namespace

void StripMap::finalize(Index ref) {
  const Polygon& p = quad_.polygon();
  const Index n = p.size();
  m_ = std::exp(-2 * kPi * strip_length_);
  mc_ = -std::expm1(-2 * kPi * strip_length_);
  big_k_ = complete_elliptic_k_from_complement(mc_);
  big_kp_ = kPi / (2 * agm(1.0, std::exp(-kPi * strip_length_)));
  module_ = big_kp_ / (2 * big_k_);
  xmin_ = prevertices_.real().minCoeff();
  xmax_ = prevertices_.real().maxCoeff();

  const Complex iref = side_integral(ref);
  const_c_ = (p.vertex(ref + 1) - p.vertex(ref)) / iref;
  const_a_ = p.vertex(ref);

  vertex_images_.resize(n);
  vertex_images_(ref) = const_a_;
  for (Index s = 0; s + 1 < n; ++s) {
    const Index j = (ref + s) % n;
    const Index k = (j + 1) % n;
    vertex_images_(k) = vertex_images_(j) + const_c_ * (s == 0 ? iref : side_integral(j));
  }
  vertex_error_ = (vertex_images_ - p.vertices()).cwiseAbs().maxCoeff() / p.diameter();

  // Ends: match the end expansions to the prevertex route on x = xmin - 1, xmax + 1.
  base_nx_ = 0;
  left_end_ = right_end_ = 0;
  const Complex zl(xmin_ - 1, 0.5), zr(xmax_ + 1, 0.5);
  left_end_ = evaluate(zl) - const_c_ * end_integral(zl, true);
  right_end_ = evaluate(zr) - const_c_ * end_integral(zr, false);
  // Interior bases; the outermost may sit past x = xmax + 1 and use the ends.
  base_x0_ = xmin_ - 1;
  const Index nx = static_cast<Index>(std::ceil((xmax_ - xmin_ + 2) / kBaseStep)) + 1;
  VecXc images(nx * kBaseRows);
  for (Index j = 0; j < kBaseRows; ++j)
    for (Index i = 0; i < nx; ++i)
      images(j * nx + i) = evaluate(base_point(base_x0_, i, j));
  base_images_ = images;
  base_nx_ = nx;
}

Complex StripMap::evaluate(Complex z) const {
  if (std::isinf(z.real())) return z.real() < 0 ? left_end_ : right_end_;
  if (!std::isfinite(z.real()) || !std::isfinite(z.imag()))
    throw DomainError("StripMap::evaluate: non-finite point");
  if (z.imag() < -1e-12 || z.imag() > 1 + 1e-12)
    throw DomainError("StripMap::evaluate: point outside the strip");
  z.imag(std::clamp(z.imag(), 0.0, 1.0));

  if (z.real() < xmin_ - 1) return left_end_ + const_c_ * end_integral(z, true);
  if (z.real() > xmax_ + 1) return right_end_ + const_c_ * end_integral(z, false);

  Index best = 0;
  double dbest = std::numeric_limits<double>::infinity();
  for (Index k = 0; k < prevertices_.size(); ++k) {
    const double d = std::abs(prevertices_(k) - z);
    if (d < dbest) {
      dbest = d;
      best = k;
    }
  }
  if (base_nx_ > 0) {
    const Index i = std::clamp<Index>(std::lround((z.real() - base_x0_) / kBaseStep), 0, base_nx_ - 1);
    const Index j = std::clamp<Index>(static_cast<Index>(z.imag() * kBaseRows), 0, kBaseRows - 1);
    const Complex b = base_point(base_x0_, i, j);
    if (std::abs(b - z) < dbest) return base_images_(j * base_nx_ + i) + const_c_ * integrate(b, -1, z, -1);
  }
  return vertex_images_(best) + const_c_ * integrate(prevertices_(best), best, z, -1);
}

StripMap StripMap::solve(const Quadrilateral& user, const StripSolveOptions& options) {
  const bool rotated = initial_module(make_arc_plan(user), user) < 1;
  const Quadrilateral q = rotated ? user.rotated() : user;
  const ArcPlan plan = make_arc_plan(q);
  const Polygon& p = q.polygon();
  const Index ref = reference_side(p);
  const std::vector<Index> sides = condition_sides(p, ref);

  VecX params = initial_parameters(plan, q);
  double r = 0;
  StripMap sm(user, rotated, place_prevertices(params, plan, q, r), r, options.nodes_per_panel);

  auto log_len = [&](Index j) { return std::log(std::abs(p.vertex(j + 1) - p.vertex(j))); };
  const double ref_len = log_len(ref);
  // Strip lengths beyond this bound correspond to modules far outside any
  // polygon the solver can resolve; treat them as rejected trial points.
  const double max_log_length = std::log(500.0);
  auto residual = [&](const VecX& x) {
    if (!(x(0) < max_log_length) || !(x(0) > -60))
      return VecX::Constant(static_cast<Index>(sides.size()), INFINITY).eval();
    sm.prevertices_ = place_prevertices(x, plan, q, sm.strip_length_);
    if (!sm.prevertices_.allFinite())
      return VecX::Constant(static_cast<Index>(sides.size()), INFINITY).eval();
    VecX res(static_cast<Index>(sides.size()));
    try {
      const double iref = std::log(std::abs(sm.side_integral(ref)));
      for (std::size_t i = 0; i < sides.size(); ++i) {
        const Index j = sides[i];
        res(static_cast<Index>(i)) =
            std::log(std::abs(sm.side_integral(j))) - iref - (log_len(j) - ref_len);
      }
    } catch (const SingularityError&) {
      res.setConstant(INFINITY);  // coalesced prevertices: reject the trial point
    }
    return res;
  };

  NewtonReport report;
  try {
    report = solve_nonlinear_system_report(residual, params, options.tol, options.newton);
  } catch (const ConvergenceError& e) {
    throw ConvergenceError(std::string("strip map parameter problem did not converge: ") + e.what(),
                           e.best_iterate(), e.residual_norm());
  }
  sm.prevertices_ = place_prevertices(report.x, plan, q, sm.strip_length_);
  sm.residual_norm_ = report.residual_norm;
  sm.finalize(ref);
  if (sm.vertex_error_ > 1e-8)
    sm.warnings_.push_back("vertex images deviate from the polygon by " +
                           std::to_string(sm.vertex_error_) + " of its diameter");
  return sm;
}

StripMap StripMap::from_prevertices(const Quadrilateral& q, const VecXc& prevertices,
                                    double strip_length, bool rotated, int nodes_per_panel,
                                    double check_tol) {
  const Polygon& p = q.polygon();
  if (prevertices.size() != p.size())
    throw ValidationError("strip map: prevertex count does not match the polygon");
  if (!(strip_length > 0) || !std::isfinite(strip_length))
    throw ValidationError("strip map: strip length must be positive");
  for (Index k = 0; k < prevertices.size(); ++k) {
    const Complex z = prevertices(k);
    if (!std::isfinite(z.real()) || (z.imag() != 0 && z.imag() != 1))
      throw ValidationError("strip map: prevertices must lie on the strip boundary");
  }
  const auto c = (rotated ? q.rotated() : q).corners();
  if (prevertices(c[0]) != Complex(0, 1) || prevertices(c[1]) != Complex(0, 0) ||
      prevertices(c[2]) != Complex(strip_length, 0) || prevertices(c[3]) != Complex(strip_length, 1))
    throw ValidationError("strip map: corners must sit at i, 0, R, R + i");
  // Counterclockwise order along the strip boundary, starting from corner 1:
  // bottom edge left to right, then top edge right to left.
  auto key = [](Complex z) { return z.imag() == 0 ? std::pair{0, z.real()} : std::pair{1, -z.real()}; };
  for (Index s = 0; s + 1 < p.size(); ++s) {
    const Index a = p.wrap(c[1] + s), b = p.wrap(c[1] + s + 1);
    if (!(key(prevertices(a)) < key(prevertices(b))))
      throw ValidationError("strip map: prevertices out of boundary order");
  }
  StripMap sm(q, rotated, prevertices, strip_length, nodes_per_panel);
  try {
    sm.finalize(reference_side(p));
  } catch (const SingularityError& e) {
    throw ValidationError(std::string("strip map: ") + e.what());
  }
  if (!(sm.vertex_error_ <= check_tol))
    throw ValidationError("strip map: stored prevertices do not reproduce the polygon");
  return sm;
}

StripMap solve_strip_parameters(const Quadrilateral& q, double tol) {
  StripSolveOptions options;
  options.tol = tol;
  return StripMap::solve(q, options);
}

double conformal_module(const Quadrilateral& q) { return StripMap::solve(q).module(); }

namespace {

// Caller's normalized rectangle [0,1] x [0, m] to the strip quadrilateral's
// [0,1] x [0, m_s]; for a rotated map the quarter turn w -> -i (w - 1) m_s.
Complex to_strip_rectangle(Complex w, const StripMap& sm) {
  const double mq = sm.module();
  const double slack = 1e-12 * std::max(1.0, mq);
  if (!(w.real() >= -slack && w.real() <= 1 + slack && w.imag() >= -slack &&
        w.imag() <= mq + slack))
    throw DomainError("rect_to_strip: point outside the rectangle");
  w = Complex(std::clamp(w.real(), 0.0, 1.0), std::clamp(w.imag(), 0.0, mq));
  if (!sm.rotated()) return w;
  const Complex r = -kI * (w - 1.0) * sm.strip_module();
  return {std::clamp(r.real(), 0.0, 1.0), std::clamp(r.imag(), 0.0, sm.strip_module())};
}

}  // namespace

Complex rect_to_strip(Complex w, const StripMap& sm) {
  w = to_strip_rectangle(w, sm);
  const double mq = sm.strip_module();
  const double k = sm.quarter_period(), kp = sm.complementary_quarter_period();
  const Complex u(-k + 2 * k * std::clamp(w.real(), 0.0, 1.0),
                  2 * k * std::clamp(w.imag(), 0.0, mq));
  if (u.imag() <= kp / 2) {
    const Complex s = jacobi_sncndn(u, sm.elliptic_parameter(), sm.elliptic_complement()).sn;
    if (s == 0.0) return {-std::numeric_limits<double>::infinity(), 0.5};
    return log_upper(s) / kPi;
  }
  const Complex s =
      jacobi_sncndn(u - kI * kp, sm.elliptic_parameter(), sm.elliptic_complement()).sn;
  if (s == 0.0) return {std::numeric_limits<double>::infinity(), 0.5};
  return sm.strip_length() - log_lower(s) / kPi;
}

namespace {

// log of dg/dw (normalized w); branch is irrelevant since it is exponentiated.
Complex log_rect_to_strip_derivative(Complex w, const StripMap& sm) {
  w = to_strip_rectangle(w, sm);
  const double k = sm.quarter_period(), kp = sm.complementary_quarter_period();
  const Complex u(-k + 2 * k * w.real(), 2 * k * w.imag());
  const bool upper = u.imag() > kp / 2;
  const auto t =
      jacobi_sncndn(upper ? u - kI * kp : u, sm.elliptic_parameter(), sm.elliptic_complement());
  Complex acc = std::log(2 * k / kPi) + std::log(t.cn) + std::log(t.dn) - std::log(t.sn);
  if (upper) acc += kI * kPi;
  if (sm.rotated()) acc += std::log(sm.strip_module()) - kI * (kPi / 2);
  return acc;
}

}  // namespace

Complex rect_to_strip_derivative(Complex w, const StripMap& sm) {
  return std::exp(log_rect_to_strip_derivative(w, sm));
}

Complex strip_to_polygon(Complex z, const StripMap& sm) { return sm.evaluate(z); }

ConformalMapPair::ConformalMapPair(std::shared_ptr<const StripMap> strip_map, double width,
                                   int guess_grid)
    : strip_map_(std::move(strip_map)),
      rect_(width > 0 ? width : std::sqrt(strip_map_->polygon().area() / strip_map_->module()),
            (width > 0 ? width : std::sqrt(strip_map_->polygon().area() / strip_map_->module())) *
                strip_map_->module()) {
  if (guess_grid < 2) throw DomainError("ConformalMapPair: guess grid too small");
  const SampleGrid grid = SampleGrid::over_rectangle(rect_, guess_grid);
  guess_w_.resize(grid.size());
  guess_z_.resize(grid.size());
  for (Index k = 0; k < grid.size(); ++k) {
    guess_w_(k) = grid.center(k);
    guess_z_(k) = inverse(guess_w_(k));
  }
}

Complex ConformalMapPair::corner(int k) const {
  switch (k & 3) {
    case 0: return {0, 0};
    case 1: return {rect_.width, 0};
    case 2: return {rect_.width, rect_.height};
    default: return {0, rect_.height};
  }
}

Complex ConformalMapPair::inverse(Complex w) const {
  return strip_map_->evaluate(rect_to_strip(w / rect_.width, *strip_map_));
}

Complex ConformalMapPair::derivative(Complex w) const {
  const StripMap& sm = *strip_map_;
  const double tol = 1e-12 * rect_.diameter();
  if (!(w.real() > -tol && w.real() < rect_.width + tol && w.imag() > -tol &&
        w.imag() < rect_.height + tol))
    throw DomainError("map_derivative: point outside the rectangle");
  for (int k = 0; k < 4; ++k)
    if (std::abs(w - corner(k)) <= tol) throw SingularityError("map_derivative: rectangle corner");

  Complex wn = w / rect_.width;
  // The points going to the strip ends are regular; step off them.
  const double eps = 1e-9;
  const Complex ws = to_strip_rectangle(wn, sm);
  if (std::abs(ws - Complex(0.5, 0)) < eps || std::abs(ws - Complex(0.5, sm.strip_module())) < eps) {
    const Complex centre(0.5, sm.module() / 2);
    wn += eps * (centre - wn) / std::abs(centre - wn);
  }
  const Complex z = rect_to_strip(wn, sm);
  const Complex val = std::exp(std::log(sm.constant_c()) + sm.log_integrand(z) +
                               log_rect_to_strip_derivative(wn, sm)) /
                      rect_.width;
  if (!std::isfinite(val.real()) || !std::isfinite(val.imag()))
    throw SingularityError("map_derivative: derivative not finite");
  return val;
}

ForwardSolution ConformalMapPair::forward(Complex zeta, double tol,
                                          std::optional<Complex> guess) const {
  const Polygon& p = polygon();
  if (!p.contains(zeta)) throw DomainError("map_forward: point outside the polygon");
  const double scale = p.diameter();
  const double rdiam = rect_.diameter();

  auto clamp_rect = [&](Complex v) {
    return Complex(std::clamp(v.real(), 0.0, rect_.width), std::clamp(v.imag(), 0.0, rect_.height));
  };

  ForwardSolution out;
  Complex w;
  double res = std::numeric_limits<double>::infinity();
  auto newton = [&](Complex w0) {
    Complex wc = clamp_rect(w0);
    Complex z = inverse(wc);
    double r = std::abs(z - zeta);
    int it = 0;
    for (; it < 80; ++it) {
      if (r <= 1e-14 * scale) break;
      // Keep the iterate off the corners where the derivative degenerates.
      Complex d;
      try {
        d = derivative(wc);
      } catch (const SingularityError&) {
        wc += 1e-9 * rdiam * (Complex(rect_.width, rect_.height) / 2.0 - wc) / std::abs(wc);
        wc = clamp_rect(wc);
        z = inverse(wc);
        r = std::abs(z - zeta);
        continue;
      }
      const Complex step = -(z - zeta) / d;
      double t = 1;
      bool accepted = false;
      for (int h = 0; h < 40; ++h, t *= 0.5) {
        const Complex wt = clamp_rect(wc + t * step);
        const Complex zt = inverse(wt);
        const double rt = std::abs(zt - zeta);
        if (rt < r) {
          wc = wt;
          z = zt;
          r = rt;
          accepted = true;
          break;
        }
      }
      if (!accepted || std::abs(t * step) <= 1e-15 * rdiam) break;
    }
    if (r < res) {
      w = wc;
      res = r;
      out.iterations = it;
    }
  };

  if (guess) newton(*guess);
  if (!(res / scale <= tol)) {
    // Restart from the stored guesses nearest to zeta until one converges.
    std::vector<std::pair<double, Index>> order(static_cast<std::size_t>(guess_z_.size()));
    for (Index k = 0; k < guess_z_.size(); ++k) order[std::size_t(k)] = {std::abs(guess_z_(k) - zeta), k};
    const std::size_t tries = std::min<std::size_t>(order.size(), 12);
    std::partial_sort(order.begin(), order.begin() + std::ptrdiff_t(tries), order.end());
    for (std::size_t i = 0; i < tries && !(res / scale <= tol); ++i) newton(guess_w_(order[i].second));
  }
  out.w = w;
  out.residual = res / scale;
  out.near_boundary = p.distance_to_boundary(zeta) <= tol * scale;
  if (!(out.residual <= tol)) {
    VecX best(2);
    best << w.real(), w.imag();
    throw ConvergenceError("map_forward: Newton iteration did not converge", best, out.residual);
  }
  return out;
}

Complex map_inverse(Complex w, const ConformalMapPair& cm) { return cm.inverse(w); }
Complex map_derivative(Complex w, const ConformalMapPair& cm) { return cm.derivative(w); }
Complex map_forward(Complex zeta, const ConformalMapPair& cm, double tol) {
  return cm.forward(zeta, tol).w;
}

namespace {

constexpr const char* kStripMapFormat = "canonet.stripmap";
constexpr int kStripMapVersion = 1;

nlohmann::json points_to_json(const VecXc& v) {
  auto arr = nlohmann::json::array();
  for (Index k = 0; k < v.size(); ++k) arr.push_back({v(k).real(), v(k).imag()});
  return arr;
}

VecXc points_from_json(const nlohmann::json& arr) {
  if (!arr.is_array()) throw ValidationError("strip map: expected an array of points");
  VecXc v(static_cast<Index>(arr.size()));
  for (std::size_t k = 0; k < arr.size(); ++k) {
    const auto& pt = arr[k];
    if (!pt.is_array() || pt.size() != 2 || !pt[0].is_number() || !pt[1].is_number())
      throw ValidationError("strip map: points must be [x, y] pairs");
    v(static_cast<Index>(k)) = Complex(pt[0].get<double>(), pt[1].get<double>());
  }
  return v;
}

}  // namespace

nlohmann::json strip_map_to_json(const StripMap& sm) {
  const auto& c = sm.quadrilateral().corners();
  return {
      {"format", kStripMapFormat},
      {"version", kStripMapVersion},
      {"polygon", points_to_json(sm.polygon().vertices())},
      {"corners", {c[0], c[1], c[2], c[3]}},
      {"strip_length", sm.strip_length()},
      {"rotated", sm.rotated()},
      {"prevertices", points_to_json(sm.prevertices())},
      {"nodes_per_panel", sm.nodes_per_panel()},
      {"module", sm.module()},
      {"elliptic_parameter", {{"convention", "m = exp(-2 pi strip_length)"},
                              {"value", std::exp(-2 * kPi * sm.strip_length())}}},
      {"constant_c", {sm.constant_c().real(), sm.constant_c().imag()}},
      {"vertex_error", sm.vertex_error()},
  };
}

StripMap strip_map_from_json(const nlohmann::json& doc) {
  try {
    if (doc.value("format", std::string()) != kStripMapFormat)
      throw ValidationError("strip map: not a strip map document");
    if (doc.at("version").get<int>() != kStripMapVersion)
      throw ValidationError("strip map: unsupported version");
    Polygon poly(points_from_json(doc.at("polygon")));
    const auto& jc = doc.at("corners");
    if (!jc.is_array() || jc.size() != 4) throw ValidationError("strip map: need four corners");
    std::array<Index, 4> corners{};
    for (std::size_t j = 0; j < 4; ++j) corners[j] = jc[j].get<Index>();
    Quadrilateral q(std::move(poly), corners);
    StripMap sm = StripMap::from_prevertices(q, points_from_json(doc.at("prevertices")),
                                             doc.at("strip_length").get<double>(),
                                             doc.value("rotated", false),
                                             doc.value("nodes_per_panel", 12));
    return sm;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("strip map: malformed document: ") + e.what());
  } catch (const DomainError& e) {
    throw ValidationError(std::string("strip map: ") + e.what());
  }
}

}  // namespace canonet
