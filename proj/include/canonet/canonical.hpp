#pragma once

// Regular base-station lattices on the canonical rectangle viewed as a flat
// torus, and the periodic received-power sums evaluated on them.

#include "canonet/geometry.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace canonet {

enum class Tiling { hexagonal, rectangular };

std::string to_string(Tiling t);
/// "hexagonal" / "hex" or "rectangular" / "rect"; throws ValidationError.
Tiling parse_tiling(const std::string& s);

/// L has no lattice factorization that fits the rectangle.
class PlacementError : public DomainError {
 public:
  PlacementError(const std::string& what, Index nearest_feasible)
      : DomainError(what), nearest_(nearest_feasible) {}
  /// Closest site count that can be placed (0 if none was found).
  Index nearest_feasible() const { return nearest_; }

 private:
  Index nearest_;
};

/// Lattice of L = L_W x L_H sites. Hexagonal lattices live on their own
/// rectangle of area W * H whose side ratio is fixed by (L_W, L_H); the
/// anisotropic scale (scale_x, scale_y) carries it onto the requested
/// rectangle. Rectangular lattices fit the requested rectangle exactly.
struct TorusLattice {
  Tiling tiling = Tiling::hexagonal;
  RectangleDomain rect{1, 1};       // the lattice's own torus
  RectangleDomain requested{1, 1};  // the rectangle it was placed for
  Index size = 0;                   // L
  int lw = 0;
  int lh = 0;
  double radius = 0;   // cell circumradius (R for hexagons)
  double shift_w = 0;  // offset of the first site
  double shift_h = 0;
  double scale_x = 1;
  double scale_y = 1;
  VecXc sites;
  VecXi column;  // 0-based w index of each site
  VecXi row;     // 0-based h index
  Complex a1{};  // primitive translations
  Complex a2{};
  std::vector<std::vector<Index>> adjacency;
  std::vector<bool> boundary;

  Index site_index(int w, int h) const { return Index(w) * lh + h; }
  /// Cell area W * H / L.
  double cell_area() const { return rect.area() / double(size); }
  /// Anisotropic map of the lattice rectangle onto the requested one.
  Complex to_requested(Complex z) const { return {scale_x * z.real(), scale_y * z.imag()}; }
  /// max(sx/sy, sy/sx); 1 when the lattice fits without distortion.
  double distortion() const { return std::max(scale_x / scale_y, scale_y / scale_x); }
  /// Indices of the 6 (hexagonal) or 4 (rectangular) torus neighbours.
  const std::vector<Index>& neighbours(Index l) const { return adjacency[std::size_t(l)]; }
  /// True when some neighbour relation of site l wraps around the torus,
  /// i.e. the cell lies on the edge of the non-periodic rectangle.
  bool is_boundary(Index l) const { return boundary[std::size_t(l)]; }
};

/// Placement fails when the best factorization needs a distortion above this.
inline constexpr double kMaxLatticeDistortion = 2.0;

/// Lattice of L sites for the rectangle; throws PlacementError naming the
/// nearest feasible L when no factorization fits.
TorusLattice place_lattice(const RectangleDomain& rect, Index L, Tiling tiling);

/// Whether place_lattice accepts L.
bool lattice_feasible(const RectangleDomain& rect, Index L, Tiling tiling);

/// Hexagon radius for L cells covering W * H.
double hex_radius(const RectangleDomain& rect, Index L);

struct LinkModel {
  double beta = 3.5;    // propagation exponent
  double noise = 0;     // sigma^2 relative to unit transmit power
  double b_sys = 5e6;   // Hz
  double r_min = 100e3; // bit/s

  void validate() const;
  /// Spectral efficiency log2(1 + x), bit/s/Hz.
  static double link(double sinr) { return std::log2(1 + sinr); }
};

/// Sum over all sites of d^-beta with torus distances, built from the
/// lattice indices. Throws SingularityError when r is on a site.
double total_received_power(Complex r, const TorusLattice& lat, const LinkModel& lm);

/// Torus-nearest site to r.
Index serving_site(Complex r, const TorusLattice& lat);

/// SINR at r when every other site transmits a fraction alpha of the time.
double sinr_at(Complex r, const TorusLattice& lat, const LinkModel& lm, double alpha);

nlohmann::ordered_json lattice_to_json(const TorusLattice& lat);

}  // namespace canonet
