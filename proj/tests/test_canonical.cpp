#include "canonet/canonical.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <random>

using namespace canonet;

namespace {

const RectangleDomain kFig6(6.84, 4.90);
const std::vector<Index> kFig6L = {64, 100, 144, 196, 256, 324, 400};

double oracle_power(Complex r, const VecXc& sites, double w, double h, double beta) {
  double s = 0;
  for (Index l = 0; l < sites.size(); ++l) s += std::pow(oracle::torus_distance(r, sites(l), w, h), -beta);
  return s;
}

std::vector<double> sorted_distances(const TorusLattice& lat, Index l) {
  std::vector<double> d;
  for (Index m = 0; m < lat.size; ++m)
    if (m != l) d.push_back(oracle::torus_distance(lat.sites(l), lat.sites(m), lat.rect.width, lat.rect.height));
  std::sort(d.begin(), d.end());
  return d;
}

}  // namespace

TEST_CASE("hexagon radius for the sweep rectangle") {
  CHECK(std::abs(hex_radius(kFig6, 64) - 0.44896259613783873) < 1e-12);
  const TorusLattice lat = place_lattice(kFig6, 64, Tiling::hexagonal);
  CHECK(std::abs(lat.radius - 0.44896259613783873) < 1e-12);
  CHECK(lat.lw % 2 == 0);
  CHECK(Index(lat.lw) * lat.lh == 64);
}

TEST_CASE("hexagonal lattice identities and regularity") {
  std::vector<std::pair<RectangleDomain, Index>> cases;
  for (Index L : kFig6L) cases.emplace_back(kFig6, L);
  cases.emplace_back(RectangleDomain(5.1, 5.9), 36);
  cases.emplace_back(RectangleDomain(6.7, 4.5), 180);
  for (const auto& [rect, L] : cases) {
    CAPTURE(L);
    const TorusLattice lat = place_lattice(rect, L, Tiling::hexagonal);
    const double wh = rect.area();
    CHECK(std::abs(lat.radius - std::sqrt(2 * wh / (3 * std::sqrt(3.0) * double(L)))) < 1e-12);
    CHECK(std::abs(double(L) * 1.5 * std::sqrt(3.0) * lat.radius * lat.radius - wh) < 1e-9);
    CHECK(std::abs(lat.rect.area() - wh) < 1e-9);
    CHECK(lat.distortion() <= kMaxLatticeDistortion);
    CHECK(std::abs(lat.rect.width * lat.scale_x - rect.width) < 1e-12);
    CHECK(std::abs(lat.rect.height * lat.scale_y - rect.height) < 1e-12);
    for (Index l = 0; l < L; ++l) {
      CHECK(lat.sites(l).real() >= 0);
      CHECK(lat.sites(l).real() < lat.rect.width);
      CHECK(lat.sites(l).imag() >= 0);
      CHECK(lat.sites(l).imag() < lat.rect.height);
    }
    // Every site sees the same multiset of distances; the six nearest are at sqrt(3) R.
    const auto ref = sorted_distances(lat, 0);
    for (Index l = 1; l < L; ++l) {
      const auto d = sorted_distances(lat, l);
      double worst = 0;
      for (std::size_t i = 0; i < d.size(); ++i) worst = std::max(worst, std::abs(d[i] - ref[i]));
      CHECK(worst < 1e-9);
    }
    for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(ref[i] - std::sqrt(3.0) * lat.radius) < 1e-9);
  }
}

TEST_CASE("torus Voronoi cells all have area WH/L") {
  for (Tiling t : {Tiling::hexagonal, Tiling::rectangular}) {
    const TorusLattice lat = place_lattice(kFig6, 64, t);
    const int n = 400;
    const CellPartition part = voronoi_on_torus(lat.sites, lat.rect.width, lat.rect.height, n);
    const double h = std::hypot(lat.rect.width / n, lat.rect.height / n);
    const double perimeter = t == Tiling::hexagonal ? 6 * lat.radius : 2 * (std::abs(lat.a1) + std::abs(lat.a2));
    for (Index l = 0; l < lat.size; ++l)
      CHECK(std::abs(part.areas(l) - lat.cell_area()) <= perimeter * h / 2);
    CHECK(std::abs(part.total_area() - kFig6.area()) < 1e-9);
  }
}

TEST_CASE("rectangular lattices fit the rectangle exactly") {
  const TorusLattice one = place_lattice(RectangleDomain(1, 1), 1, Tiling::rectangular);
  CHECK(one.sites.size() == 1);
  CHECK(std::abs(one.sites(0) - Complex(0.5, 0.5)) < 1e-15);

  const TorusLattice lat = place_lattice(RectangleDomain(6, 6), 36, Tiling::rectangular);
  CHECK(lat.lw == 6);
  CHECK(lat.lh == 6);
  CHECK(lat.distortion() == 1.0);
  CHECK(std::abs(double(lat.size) * lat.cell_area() - 36.0) < 1e-9);
  for (Index l = 0; l < lat.size; ++l) {
    const auto d = sorted_distances(lat, l);
    for (int i = 0; i < 4; ++i) CHECK(std::abs(d[std::size_t(i)] - 1.0) < 1e-9);
    CHECK(lat.neighbours(l).size() == 4);
  }
  // Boundary cells are those on the edge of the plain rectangle.
  for (Index l = 0; l < lat.size; ++l) {
    const bool edge = lat.column(l) == 0 || lat.column(l) == 5 || lat.row(l) == 0 || lat.row(l) == 5;
    CHECK(lat.is_boundary(l) == edge);
  }
}

TEST_CASE("infeasible site counts name a feasible neighbour") {
  try {
    place_lattice(kFig6, 63, Tiling::hexagonal);
    FAIL("expected a placement error");
  } catch (const PlacementError& e) {
    CHECK(e.nearest_feasible() > 0);
    CHECK(lattice_feasible(kFig6, e.nearest_feasible(), Tiling::hexagonal));
    CHECK(std::abs(e.nearest_feasible() - 63) <= 3);
  }
  CHECK_THROWS_AS(place_lattice(kFig6, 37, Tiling::rectangular), PlacementError);
  CHECK_THROWS_AS(place_lattice(kFig6, 0, Tiling::rectangular), DomainError);
  CHECK(parse_tiling("hex") == Tiling::hexagonal);
  CHECK_THROWS_AS(parse_tiling("triangle"), ValidationError);
}

TEST_CASE("received power matches a direct image-enumeration sum") {
  LinkModel lm;
  const TorusLattice lat = place_lattice(kFig6, 64, Tiling::hexagonal);
  std::mt19937 rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  for (double beta : {2.0, 2.5, 3.5, 4.0}) {
    lm.beta = beta;
    for (int i = 0; i < 50; ++i) {
      const Complex r(u(rng) * lat.rect.width, u(rng) * lat.rect.height);
      const double ref = oracle_power(r, lat.sites, lat.rect.width, lat.rect.height, beta);
      CHECK(std::abs(total_received_power(r, lat, lm) - ref) <= 1e-12 * ref);
    }
  }

  const TorusLattice single = place_lattice(RectangleDomain(2, 2), 1, Tiling::rectangular);
  const Complex r(0.3, 1.7);
  CHECK(total_received_power(r, single, lm) ==
        doctest::Approx(std::pow(torus_distance(r, single.sites(0), 2, 2), -lm.beta)).epsilon(1e-14));
  CHECK_THROWS_AS(total_received_power(lat.sites(5), lat, lm), SingularityError);
}

TEST_CASE("received power is invariant under lattice symmetries and joint translation") {
  const LinkModel lm;
  const TorusLattice lat = place_lattice(kFig6, 100, Tiling::hexagonal);
  std::mt19937 rng(8);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 30; ++i) {
    const Complex r(u(rng) * lat.rect.width, u(rng) * lat.rect.height);
    const double p = total_received_power(r, lat, lm);
    auto wrap = [&](Complex z) {
      return Complex(std::fmod(z.real() + 10 * lat.rect.width, lat.rect.width),
                     std::fmod(z.imag() + 10 * lat.rect.height, lat.rect.height));
    };
    CHECK(total_received_power(wrap(r + lat.a1), lat, lm) == doctest::Approx(p).epsilon(1e-9));
    CHECK(total_received_power(wrap(r + lat.a2), lat, lm) == doctest::Approx(p).epsilon(1e-9));
    // Point reflection through a site.
    CHECK(total_received_power(wrap(2.0 * lat.sites(7) - r), lat, lm) == doctest::Approx(p).epsilon(1e-9));
    // Shift point and all sites together.
    const Complex t(u(rng) * 3, u(rng) * 3);
    VecXc moved(lat.size);
    for (Index l = 0; l < lat.size; ++l) moved(l) = wrap(lat.sites(l) + t);
    CHECK(oracle_power(wrap(r + t), moved, lat.rect.width, lat.rect.height, lm.beta) ==
          doctest::Approx(p).epsilon(1e-12));
  }
}

TEST_CASE("SIR scales with the inverse load and falls away from the site") {
  LinkModel lm;
  lm.beta = 3.0;
  const TorusLattice lat = place_lattice(kFig6, 64, Tiling::hexagonal);
  const Complex site = lat.sites(10);
  const Complex r = site + Complex(0.1, 0.05);
  CHECK(sinr_at(r, lat, lm, 0.5) == doctest::Approx(2 * sinr_at(r, lat, lm, 1.0)).epsilon(1e-14));

  double prev = std::numeric_limits<double>::infinity();
  for (double s = 0.02; s < lat.radius * 0.86; s += 0.02) {
    const double g = sinr_at(site + s * std::polar(1.0, 0.3), lat, lm, 1.0);
    CHECK(g < prev);
    prev = g;
  }
  // Independent composition: nearest site by image enumeration, power sum by direct loop.
  std::mt19937 rng(12);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 50; ++i) {
    const Complex z(u(rng) * lat.rect.width, u(rng) * lat.rect.height);
    double dmin = std::numeric_limits<double>::infinity();
    for (Index l = 0; l < lat.size; ++l)
      dmin = std::min(dmin, oracle::torus_distance(z, lat.sites(l), lat.rect.width, lat.rect.height));
    CHECK(dmin <= lat.radius + 1e-12);
    const double total = oracle_power(z, lat.sites, lat.rect.width, lat.rect.height, lm.beta);
    const double alpha = 0.1 + 0.9 * u(rng);
    const double expect = std::pow(dmin, -lm.beta) / (alpha * (total - std::pow(dmin, -lm.beta)));
    CHECK(sinr_at(z, lat, lm, alpha) == doctest::Approx(expect).epsilon(1e-11));
  }
  CHECK_THROWS_AS(sinr_at(r, lat, lm, 0.0), DomainError);
  CHECK_THROWS_AS(sinr_at(site, lat, lm, 1.0), SingularityError);
  lm.beta = 1.5;
  CHECK_THROWS_AS(lm.validate(), ValidationError);
}

TEST_CASE("lattice JSON carries sites and metadata") {
  const TorusLattice lat = place_lattice(kFig6, 144, Tiling::hexagonal);
  const auto j = lattice_to_json(lat);
  CHECK(j["sites"].size() == 144);
  CHECK(j["tiling"] == "hexagonal");
  CHECK(j["L_W"].get<int>() * j["L_H"].get<int>() == 144);
  CHECK(j["R"].get<double>() == lat.radius);
}
