#pragma once

#include "canonet/core.hpp"

#include <array>
#include <optional>
#include <vector>

namespace canonet {

/// Simple closed polygon, vertices counterclockwise. Interior angles are
/// alpha_k * pi with alpha_k in (0, 2).
class Polygon {
 public:
  explicit Polygon(VecXc vertices);

  Index size() const { return vertices_.size(); }
  const VecXc& vertices() const { return vertices_; }
  Complex vertex(Index k) const { return vertices_(wrap(k)); }
  const VecX& angle_fractions() const { return alpha_; }
  double angle_fraction(Index k) const { return alpha_(wrap(k)); }

  Index wrap(Index k) const { return ((k % size()) + size()) % size(); }

  double area() const { return area_; }
  double diameter() const;
  double perimeter() const;
  /// Lower-left and upper-right corners of the bounding box.
  std::pair<Complex, Complex> bounding_box() const;

  /// Boundary points count as inside.
  bool contains(Complex p) const;
  double distance_to_boundary(Complex p) const;

 private:
  VecXc vertices_;
  VecX alpha_;
  double area_ = 0;
  double scale_ = 0;
};

double polygon_area(const Polygon& p);

/// Polygon with four marked vertices (corners), counterclockwise.
class Quadrilateral {
 public:
  Quadrilateral(Polygon polygon, std::array<Index, 4> corners);

  const Polygon& polygon() const { return polygon_; }
  const std::array<Index, 4>& corners() const { return corners_; }
  Index corner(int j) const { return corners_[static_cast<std::size_t>(j & 3)]; }

  /// Corners relabeled so that corner j becomes corner j-1; the module of
  /// the result is the reciprocal.
  Quadrilateral rotated() const;

 private:
  Polygon polygon_;
  std::array<Index, 4> corners_;
};

struct RectangleDomain {
  double width;
  double height;

  RectangleDomain(double w, double h);
  double area() const { return width * height; }
  double aspect() const { return height / width; }
  double diameter() const;
};

/// Uniform cell-centred sampling grid; sample (i, j) has index j * nx + i.
struct SampleGrid {
  Complex origin;
  double dx = 0;
  double dy = 0;
  int nx = 0;
  int ny = 0;

  static SampleGrid over_box(Complex lower, Complex upper, int nx, int ny);
  static SampleGrid over_rectangle(const RectangleDomain& rect, int n);
  static SampleGrid over_polygon(const Polygon& p, int n);

  Index size() const { return Index(nx) * ny; }
  double cell_area() const { return dx * dy; }
  Complex center(Index k) const {
    return origin + Complex((double(k % nx) + 0.5) * dx, (double(k / nx) + 0.5) * dy);
  }
  bool operator==(const SampleGrid& o) const {
    return origin == o.origin && dx == o.dx && dy == o.dy && nx == o.nx && ny == o.ny;
  }
};

/// Grid-sampled nearest-site partition. labels(k) is the owning site of
/// sample k, or -1 for samples outside the domain.
struct CellPartition {
  SampleGrid grid;
  VecXi labels;
  VecX areas;

  Index cell_count() const { return areas.size(); }
  double total_area() const { return areas.sum(); }
};

/// Shortest distance on the W x H flat torus.
double torus_distance(Complex r1, Complex r2, double width, double height);

enum class Metric { periodic, euclidean };

/// Voronoi partition of [0,W)x[0,H) under the torus metric. Equidistant
/// samples go to the site with the largest wrapped displacement, which keeps
/// the partition invariant under translations of a lattice.
CellPartition voronoi_on_torus(const VecXc& sites, double width, double height, int grid_n);

/// Same on a caller-supplied grid covering [0,W)x[0,H).
CellPartition voronoi_on_torus(const VecXc& sites, double width, double height,
                               const SampleGrid& grid);

/// Euclidean Voronoi partition restricted to a polygon, sampled on an
/// n x n grid over its bounding box.
CellPartition voronoi_in_polygon(const VecXc& sites, const Polygon& p, int grid_n);

/// Same, on a caller-supplied grid.
CellPartition voronoi_in_polygon(const VecXc& sites, const Polygon& p, const SampleGrid& grid);

/// Euclidean Voronoi partition of the (non-periodic) rectangle [0,W]x[0,H].
CellPartition voronoi_in_rectangle(const VecXc& sites, const RectangleDomain& rect, int grid_n);

}  // namespace canonet
