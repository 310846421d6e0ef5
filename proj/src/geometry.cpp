#include "canonet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>

namespace canonet {

namespace {

double cross(Complex a, Complex b) { return a.real() * b.imag() - a.imag() * b.real(); }

double segment_distance(Complex p, Complex a, Complex b) {
  const Complex ab = b - a;
  const double len2 = std::norm(ab);
  double t = len2 > 0 ? ((p - a) * std::conj(ab)).real() / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::abs(p - (a + t * ab));
}

int orientation(Complex a, Complex b, Complex c, double eps) {
  const double v = cross(b - a, c - a);
  if (v > eps) return 1;
  if (v < -eps) return -1;
  return 0;
}

bool on_segment(Complex a, Complex b, Complex p) {
  return std::min(a.real(), b.real()) <= p.real() && p.real() <= std::max(a.real(), b.real()) &&
         std::min(a.imag(), b.imag()) <= p.imag() && p.imag() <= std::max(a.imag(), b.imag());
}

bool segments_intersect(Complex a, Complex b, Complex c, Complex d, double eps) {
  const int o1 = orientation(a, b, c, eps);
  const int o2 = orientation(a, b, d, eps);
  const int o3 = orientation(c, d, a, eps);
  const int o4 = orientation(c, d, b, eps);
  if (o1 != o2 && o3 != o4) return true;
  if (o1 == 0 && on_segment(a, b, c)) return true;
  if (o2 == 0 && on_segment(a, b, d)) return true;
  if (o3 == 0 && on_segment(c, d, a)) return true;
  if (o4 == 0 && on_segment(c, d, b)) return true;
  return false;
}

// |d| reduced to the shortest representative modulo period.
double wrap_delta(double d, double period) {
  d = std::abs(d);
  if (d > period) return std::abs(std::remainder(d, period));
  if (d > period / 2) return period - d;
  return d;
}

}  // namespace

Polygon::Polygon(VecXc vertices) : vertices_(std::move(vertices)) {
  const Index n = vertices_.size();
  if (n < 3) throw DomainError("Polygon: need at least 3 vertices");
  if (!vertices_.allFinite()) throw DomainError("Polygon: vertices must be finite");

  double twice_area = 0;
  for (Index k = 0; k < n; ++k) twice_area += cross(vertices_(k), vertices_((k + 1) % n));
  area_ = twice_area / 2;

  scale_ = diameter();
  const double scale = scale_;
  if (!(scale > 0)) throw DomainError("Polygon: degenerate polygon");
  for (Index k = 0; k < n; ++k)
    if (std::abs(vertices_((k + 1) % n) - vertices_(k)) <= 1e-12 * scale)
      throw DomainError("Polygon: zero-length side");
  if (!(area_ > 1e-12 * scale * scale))
    throw DomainError("Polygon: vertices must be ordered counterclockwise with positive area");

  const double eps = 1e-14 * scale * scale;
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      const bool adjacent = (j == i + 1) || (i == 0 && j == n - 1);
      const Complex a = vertices_(i), b = vertices_((i + 1) % n);
      const Complex c = vertices_(j), d = vertices_((j + 1) % n);
      if (adjacent) {
        // Adjacent sides may only share their common vertex.
        const Complex shared = (j == i + 1) ? b : a;
        const Complex far_a = (j == i + 1) ? a : b;
        const Complex far_c = (j == i + 1) ? d : c;
        if (orientation(far_a, shared, far_c, eps) == 0 &&
            ((far_c - shared) * std::conj(far_a - shared)).real() > 0)
          throw DomainError("Polygon: boundary folds back on itself");
        continue;
      }
      if (segments_intersect(a, b, c, d, eps)) throw DomainError("Polygon: not simple");
    }
  }

  alpha_.resize(n);
  for (Index k = 0; k < n; ++k) {
    const Complex in = vertices_(k) - vertices_((k + n - 1) % n);
    const Complex out = vertices_((k + 1) % n) - vertices_(k);
    const double turn = std::arg(out / in);
    alpha_(k) = 1.0 - turn / std::numbers::pi;
    if (!(alpha_(k) > 1e-9 && alpha_(k) < 2 - 1e-9))
      throw DomainError("Polygon: interior angle must lie strictly between 0 and 2 pi");
  }
  const double closure = (1.0 - alpha_.array()).sum();
  if (std::abs(closure - 2.0) > 1e-9) throw DomainError("Polygon: angle sum does not close");
}

double Polygon::diameter() const {
  double d = 0;
  for (Index i = 0; i < vertices_.size(); ++i)
    for (Index j = i + 1; j < vertices_.size(); ++j)
      d = std::max(d, std::abs(vertices_(i) - vertices_(j)));
  return d;
}

double Polygon::perimeter() const {
  double s = 0;
  for (Index k = 0; k < size(); ++k) s += std::abs(vertex(k + 1) - vertex(k));
  return s;
}

std::pair<Complex, Complex> Polygon::bounding_box() const {
  const VecX re = vertices_.real();
  const VecX im = vertices_.imag();
  return {Complex(re.minCoeff(), im.minCoeff()), Complex(re.maxCoeff(), im.maxCoeff())};
}

double Polygon::distance_to_boundary(Complex p) const {
  double d = std::numeric_limits<double>::infinity();
  for (Index k = 0; k < size(); ++k) d = std::min(d, segment_distance(p, vertex(k), vertex(k + 1)));
  return d;
}

bool Polygon::contains(Complex p) const {
  const Index n = size();
  bool inside = false;
  double closest = std::numeric_limits<double>::infinity();
  for (Index k = 0, j = n - 1; k < n; j = k++) {
    const Complex a = vertices_(j), b = vertices_(k);
    closest = std::min(closest, segment_distance(p, a, b));
    if ((b.imag() > p.imag()) != (a.imag() > p.imag())) {
      const double x = a.real() + (p.imag() - a.imag()) * (b.real() - a.real()) / (b.imag() - a.imag());
      if (p.real() < x) inside = !inside;
    }
  }
  if (closest <= 1e-12 * scale_) return true;
  return inside;
}

double polygon_area(const Polygon& p) { return p.area(); }

Quadrilateral::Quadrilateral(Polygon polygon, std::array<Index, 4> corners)
    : polygon_(std::move(polygon)), corners_(corners) {
  const Index n = polygon_.size();
  if (n < 4) throw DomainError("Quadrilateral: polygon needs at least 4 vertices");
  for (Index c : corners_)
    if (c < 0 || c >= n) throw DomainError("Quadrilateral: corner index out of range");
  const std::set<Index> distinct(corners_.begin(), corners_.end());
  if (distinct.size() != 4) throw DomainError("Quadrilateral: corners must be distinct");
  const Index c0 = corners_[0];
  Index prev = 0;
  for (int j = 1; j < 4; ++j) {
    const Index offset = polygon_.wrap(corners_[j] - c0);
    if (offset <= prev) throw DomainError("Quadrilateral: corners must be counterclockwise");
    prev = offset;
  }
}

Quadrilateral Quadrilateral::rotated() const {
  return Quadrilateral(polygon_, {corners_[1], corners_[2], corners_[3], corners_[0]});
}

RectangleDomain::RectangleDomain(double w, double h) : width(w), height(h) {
  if (!(w > 0 && h > 0 && std::isfinite(w) && std::isfinite(h)))
    throw DomainError("RectangleDomain: width and height must be positive");
}

double RectangleDomain::diameter() const { return std::hypot(width, height); }

SampleGrid SampleGrid::over_box(Complex lower, Complex upper, int nx, int ny) {
  if (nx < 1 || ny < 1) throw DomainError("SampleGrid: resolution must be positive");
  const Complex span = upper - lower;
  if (!(span.real() > 0 && span.imag() > 0)) throw DomainError("SampleGrid: empty box");
  return SampleGrid{lower, span.real() / nx, span.imag() / ny, nx, ny};
}

SampleGrid SampleGrid::over_rectangle(const RectangleDomain& rect, int n) {
  return over_box(Complex(0, 0), Complex(rect.width, rect.height), n, n);
}

SampleGrid SampleGrid::over_polygon(const Polygon& p, int n) {
  const auto [lo, hi] = p.bounding_box();
  return over_box(lo, hi, n, n);
}

double torus_distance(Complex r1, Complex r2, double width, double height) {
  if (!(width > 0 && height > 0)) throw DomainError("torus_distance: periods must be positive");
  const double dx = wrap_delta(r1.real() - r2.real(), width);
  const double dy = wrap_delta(r1.imag() - r2.imag(), height);
  return std::hypot(dx, dy);
}

CellPartition voronoi_on_torus(const VecXc& sites, double width, double height, int grid_n) {
  return voronoi_on_torus(sites, width, height,
                          SampleGrid::over_rectangle(RectangleDomain(width, height), grid_n));
}

CellPartition voronoi_on_torus(const VecXc& sites, double width, double height,
                               const SampleGrid& grid) {
  const Index count = sites.size();
  if (count < 1) throw DomainError("voronoi_on_torus: need at least one site");
  const RectangleDomain rect(width, height);
  for (Index l = 0; l < count; ++l) {
    const Complex s = sites(l);
    if (!(s.real() >= 0 && s.real() < width && s.imag() >= 0 && s.imag() < height))
      throw DomainError("voronoi_on_torus: site outside [0,W)x[0,H)");
  }
  const double coincide = 1e-12 * rect.diameter();
  for (Index a = 0; a < count; ++a)
    for (Index b = a + 1; b < count; ++b)
      if (torus_distance(sites(a), sites(b), width, height) <= coincide)
        throw DomainError("voronoi_on_torus: coincident sites");

  // Ties are broken by the wrapped displacement, not the site index, so the
  // partition commutes with lattice translations.
  const double tie = 1e-10 * rect.diameter() * rect.diameter();
  CellPartition part;
  part.grid = grid;
  part.labels.resize(grid.size());
  part.areas = VecX::Zero(count);
  for (Index k = 0; k < grid.size(); ++k) {
    const Complex p = grid.center(k);
    Index best = 0;
    double best_d2 = std::numeric_limits<double>::infinity(), bx = 0, by = 0;
    for (Index l = 0; l < count; ++l) {
      const double dx = std::remainder(p.real() - sites(l).real(), width);
      const double dy = std::remainder(p.imag() - sites(l).imag(), height);
      const double d2 = dx * dx + dy * dy;
      const bool closer = d2 < best_d2 - tie;
      const bool tied = !closer && d2 <= best_d2 + tie;
      if (closer || (tied && (dx > bx + 1e-9 * width || (dx >= bx - 1e-9 * width && dy > by)))) {
        best_d2 = d2;
        best = l;
        bx = dx;
        by = dy;
      }
    }
    part.labels(k) = static_cast<int>(best);
    part.areas(best) += grid.cell_area();
  }
  return part;
}

namespace {

Index nearest_euclidean(Complex p, const VecXc& sites) {
  Index best = 0;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (Index l = 0; l < sites.size(); ++l) {
    const double d2 = std::norm(p - sites(l));
    if (d2 < best_d2) {
      best_d2 = d2;
      best = l;
    }
  }
  return best;
}

}  // namespace

CellPartition voronoi_in_polygon(const VecXc& sites, const Polygon& p, const SampleGrid& grid) {
  if (sites.size() < 1) throw DomainError("voronoi_in_polygon: need at least one site");
  for (Index l = 0; l < sites.size(); ++l)
    if (!p.contains(sites(l))) throw DomainError("voronoi_in_polygon: site outside polygon");

  CellPartition part;
  part.grid = grid;
  part.labels.resize(grid.size());
  part.areas = VecX::Zero(sites.size());
  for (Index k = 0; k < grid.size(); ++k) {
    const Complex c = grid.center(k);
    if (!p.contains(c)) {
      part.labels(k) = -1;
      continue;
    }
    const Index l = nearest_euclidean(c, sites);
    part.labels(k) = static_cast<int>(l);
    part.areas(l) += grid.cell_area();
  }
  return part;
}

CellPartition voronoi_in_polygon(const VecXc& sites, const Polygon& p, int grid_n) {
  return voronoi_in_polygon(sites, p, SampleGrid::over_polygon(p, grid_n));
}

CellPartition voronoi_in_rectangle(const VecXc& sites, const RectangleDomain& rect, int grid_n) {
  if (sites.size() < 1) throw DomainError("voronoi_in_rectangle: need at least one site");
  CellPartition part;
  part.grid = SampleGrid::over_rectangle(rect, grid_n);
  part.labels.resize(part.grid.size());
  part.areas = VecX::Zero(sites.size());
  for (Index k = 0; k < part.grid.size(); ++k) {
    const Index l = nearest_euclidean(part.grid.center(k), sites);
    part.labels(k) = static_cast<int>(l);
    part.areas(l) += part.grid.cell_area();
  }
  return part;
}

}  // namespace canonet
