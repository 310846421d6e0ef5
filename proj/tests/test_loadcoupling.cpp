#include "canonet/loadcoupling.hpp"
#include "oracles.hpp"

#include <doctest.h>

using namespace canonet;

namespace {

VecXc two_sites() {
  VecXc s(2);
  s << Complex(0.5, 0.5), Complex(1.5, 0.5);
  return s;
}

LinkModel toy_link() {
  LinkModel lm;
  lm.beta = 3.0;
  return lm;
}

// Uniform masses over a partition grid.
VecX uniform_masses(const CellPartition& part) {
  return VecX::Constant(part.grid.size(), 1.0 / double(part.grid.size()));
}

LoadProblem lattice_problem(const TorusLattice& lat, Metric metric, int n, double volume) {
  LoadProblem p;
  p.sites = lat.sites;
  p.partition = metric == Metric::periodic
                    ? voronoi_on_torus(lat.sites, lat.rect.width, lat.rect.height,
                                       SampleGrid::over_box({0, 0}, {lat.rect.width, lat.rect.height},
                                                            lat.lw * n, 2 * lat.lh * n))
                    : voronoi_in_rectangle(lat.sites, lat.rect, 2 * lat.lw * n);
  p.masses = uniform_masses(p.partition);
  p.volume = volume;
  p.link = toy_link();
  p.metric = metric;
  p.period_w = lat.rect.width;
  p.period_h = lat.rect.height;
  for (Index l = 0; l < lat.size; ++l) p.boundary.push_back(lat.is_boundary(l));
  return p;
}

}  // namespace

TEST_CASE("cell load edge cases") {
  CHECK(cell_load(0, 5, 1).load == 0);
  const CellLoad full = cell_load(2, 2.5e6, 5e6);
  CHECK(full.load == 1.0);
  CHECK_FALSE(full.clamped);
  const CellLoad over = cell_load(3, 2.5e6, 5e6);
  CHECK(over.load == 1.0);
  CHECK(over.clamped);
  CHECK_THROWS_AS(cell_load(1, 1, 0), DomainError);
}

TEST_CASE("two-cell torus matches the scalar bisection oracle") {
  LoadProblem p;
  p.sites = two_sites();
  p.partition = voronoi_on_torus(p.sites, 2, 1, SampleGrid::over_box({0, 0}, {2, 1}, 40, 20));
  p.masses = uniform_masses(p.partition);
  p.volume = 20;
  p.link = toy_link();
  p.metric = Metric::periodic;
  p.period_w = 2;
  p.period_h = 1;
  p.split_edge_samples = false;  // the oracle integrates the labelled samples
  const LoadVector v = load_fixed_point(p, 1e-13);
  CHECK(std::abs(v.load(0) - v.load(1)) < 1e-12);

  auto rhs = [&](double a) {
    double sum = 0;
    for (Index k = 0; k < p.partition.grid.size(); ++k) {
      if (p.partition.labels(k) != 0) continue;
      const Complex z = p.partition.grid.center(k);
      const double own = std::pow(oracle::torus_distance(z, p.sites(0), 2, 1), -3.0);
      const double other = std::pow(oracle::torus_distance(z, p.sites(1), 2, 1), -3.0);
      sum += p.masses(k) * p.link.r_min / std::log2(1 + own / (a * other));
    }
    return p.volume * sum / p.link.b_sys;
  };
  const double a = oracle::bisect([&](double x) { return rhs(x) - x; }, 1e-6, 1.0);
  CHECK(a > 0.01);
  CHECK(a < 0.99);
  CHECK(std::abs(v.load(0) - a) < 1e-8);
  CHECK(v.residual < 1e-12);
}

TEST_CASE("two-cell line network matches a reduced scalar fixed point") {
  LoadProblem p;
  p.sites = two_sites();
  p.partition = voronoi_in_rectangle(p.sites, RectangleDomain(2, 1), 40);
  // Demand heavier on the left cell.
  p.masses.resize(p.partition.grid.size());
  for (Index k = 0; k < p.masses.size(); ++k) p.masses(k) = p.partition.grid.center(k).real() < 1 ? 3.0 : 1.0;
  p.masses /= p.masses.sum();
  p.volume = 12;
  p.link = toy_link();
  p.split_edge_samples = false;
  const LoadVector v = load_fixed_point(p, 1e-14);

  auto cell_rhs = [&](int cell, double other_load) {
    double sum = 0;
    for (Index k = 0; k < p.partition.grid.size(); ++k) {
      if (p.partition.labels(k) != cell) continue;
      const Complex z = p.partition.grid.center(k);
      const double own = std::pow(std::abs(z - p.sites(cell)), -3.0);
      const double other = std::pow(std::abs(z - p.sites(1 - cell)), -3.0);
      sum += p.masses(k) * p.link.r_min / std::log2(1 + own / (other_load * other));
    }
    return std::min(1.0, p.volume * sum / p.link.b_sys);
  };
  const double a0 = oracle::bisect([&](double x) { return cell_rhs(0, cell_rhs(1, x)) - x; }, 1e-6, 1.0);
  const double a1 = cell_rhs(1, a0);
  CHECK(a0 < 1.0);
  CHECK(a0 > a1);
  CHECK(std::abs(v.load(0) - a0) < 1e-8);
  CHECK(std::abs(v.load(1) - a1) < 1e-8);
}

TEST_CASE("symmetric periodic lattice gives equal loads near the uniform load") {
  const TorusLattice lat = place_lattice(RectangleDomain(6.84, 4.90), 16, Tiling::hexagonal);
  const LoadProblem p = lattice_problem(lat, Metric::periodic, 12, 40);
  const LoadVector v = load_fixed_point(p);
  CHECK(v.load.maxCoeff() - v.load.minCoeff() < 1e-6);
  const double ac = canonical_uniform_load(lat, 40, toy_link(), 1e-12, 120);
  CHECK(v.load.mean() == doctest::Approx(ac).epsilon(0.02));
  CHECK(v.residual < 1e-8);
  CHECK(std::none_of(v.clamped.begin(), v.clamped.end(), [](bool b) { return b; }));
}

TEST_CASE("vanishing demand gives vanishing loads") {
  const TorusLattice lat = place_lattice(RectangleDomain(6, 6), 9, Tiling::rectangular);
  const LoadVector v = load_fixed_point(lattice_problem(lat, Metric::euclidean, 6, 1e-9));
  CHECK(v.load.maxCoeff() < 1e-9);
  CHECK(canonical_uniform_load(lat, 1e-9, toy_link(), 1e-12, 40) < 1e-9);
}

TEST_CASE("boundary cells carry less load without wrap-around") {
  const TorusLattice lat = place_lattice(RectangleDomain(6, 6), 36, Tiling::rectangular);
  const LoadVector v = load_fixed_point(lattice_problem(lat, Metric::euclidean, 6, 100));
  CHECK(v.mean_where(true) < v.mean_where(false));
  const double ac = canonical_uniform_load(lat, 100, toy_link(), 1e-12, 60);
  CHECK(ac >= v.load.maxCoeff());
}

TEST_CASE("more demand in one cell never lowers any load") {
  const TorusLattice lat = place_lattice(RectangleDomain(6, 6), 16, Tiling::rectangular);
  LoadProblem p = lattice_problem(lat, Metric::euclidean, 5, 60);
  const LoadVector base = load_fixed_point(p, 1e-12);
  for (int cell : {0, 5, 10}) {
    LoadProblem q = p;
    for (Index k = 0; k < q.masses.size(); ++k)
      if (q.partition.labels(k) == cell) q.masses(k) *= 1.5;
    const LoadVector more = load_fixed_point(q, 1e-12);
    for (Index l = 0; l < lat.size; ++l) CHECK(more.load(l) >= base.load(l) - 1e-10);
    CHECK(more.load(cell) > base.load(cell));
  }
}

TEST_CASE("iteration cap reports the last two iterates") {
  const TorusLattice lat = place_lattice(RectangleDomain(6, 6), 16, Tiling::rectangular);
  try {
    load_fixed_point(lattice_problem(lat, Metric::euclidean, 4, 60), 1e-12, 2);
    FAIL("expected a convergence error");
  } catch (const LoadConvergenceError& e) {
    CHECK(e.best_iterate().size() == 16);
    CHECK(e.previous_iterate().size() == 16);
    CHECK((e.best_iterate() - e.previous_iterate()).cwiseAbs().maxCoeff() == doctest::Approx(e.residual_norm()));
  }
}

TEST_CASE("uniform load solves its scalar equation and orders by L and beta") {
  const RectangleDomain rect(6.84, 4.90);
  LinkModel lm;
  const double volume = 2400;
  lm.beta = 3.5;
  const TorusLattice lat = place_lattice(rect, 100, Tiling::hexagonal);
  const double a = canonical_uniform_load(lat, volume, lm, 1e-13, 60);
  CHECK(std::abs(canonical_load_map(lat, volume, lm, a, 60) - a) < 1e-10);

  double prev_l = 2;
  for (Index L : {64, 100, 144}) {
    const double v = canonical_uniform_load(place_lattice(rect, L, Tiling::hexagonal), volume, lm, 1e-12, 60);
    CHECK(v < prev_l);
    prev_l = v;
  }
  double prev_b = 2;
  for (double beta : {2.5, 3.0, 3.5, 4.0}) {
    lm.beta = beta;
    const double v = canonical_uniform_load(lat, volume, lm, 1e-12, 60);
    CHECK(v < prev_b);
    prev_b = v;
  }
  lm.beta = 3.5;
  CHECK_THROWS_AS(canonical_uniform_load(lat, 1e6, lm, 1e-12, 30), InfeasibleDemandError);
}

TEST_CASE("dimensioning inverts the uniform load") {
  const RectangleDomain rect(6.84, 4.90);
  LinkModel lm;
  const double volume = 2400;
  const int n = 40;
  const double target = canonical_uniform_load(place_lattice(rect, 64, Tiling::hexagonal), volume, lm, 1e-12, n);
  const DimensioningResult d = dimension_network(target, rect, volume, lm, Tiling::hexagonal, n, 200);
  CHECK(d.L == 64);
  CHECK(d.load <= target);

  LinkModel half = lm;
  half.r_min /= 2;
  CHECK(dimension_network(target, rect, volume, half, Tiling::hexagonal, n, 200).L <= d.L);
  CHECK_THROWS_AS(dimension_network(0.01, rect, volume, lm, Tiling::hexagonal, n, 40), DimensioningError);
  CHECK_THROWS_AS(dimension_network(1.5, rect, volume, lm, Tiling::hexagonal, n, 40), DomainError);
  // A noiseless single cell has no interference and no load; it is never the answer.
  CHECK(dimension_network(0.9, RectangleDomain(6, 6), 1.0, lm, Tiling::rectangular, 20, 10).L == 2);
  LinkModel noisy = lm;
  noisy.noise = 1e-3;
  CHECK(dimension_network(0.9, RectangleDomain(6, 6), 1.0, noisy, Tiling::rectangular, 20, 10).L == 1);
}

TEST_CASE("Pearson correlation and domain comparison") {
  VecX a(4), b(4), c(4);
  a << 1, 2, 3, 4;
  b << 2, 4, 6, 8;
  c << 4, 3, 2, 1;
  CHECK(pearson_correlation(a, b) == doctest::Approx(1.0));
  CHECK(pearson_correlation(a, c) == doctest::Approx(-1.0));
  LoadVector x, y;
  x.load = a;
  y.load = c;
  const ScenarioResult r = compare_domains(x, x, y, 4.0, 0.0);
  CHECK(r.correlation == doctest::Approx(-1.0));
  CHECK(r.worst_case_holds);
  LoadVector shorter;
  shorter.load = VecX::Ones(3);
  CHECK_THROWS_AS(compare_domains(x, x, shorter, 1.0, 0.0), std::logic_error);
  const std::string csv = load_pattern_csv(r);
  CHECK(csv.rfind("cell,periodic,canonical,physical", 0) == 0);
}

TEST_CASE("splitting edge samples removes the cell-area bias of an unaligned grid") {
  const TorusLattice lat = place_lattice(RectangleDomain(5, 5), 64, Tiling::rectangular);
  auto solve = [&](int n, bool split) {
    LoadProblem p = lattice_problem(lat, Metric::euclidean, 1, 2400);
    p.partition = voronoi_in_rectangle(lat.sites, lat.rect, n);
    p.masses = uniform_masses(p.partition);
    p.split_edge_samples = split;
    return load_fixed_point(p, 1e-12).load;
  };
  // 256 samples put exactly 32 per cell; 250 cuts cells mid-sample.
  const VecX aligned = solve(256, false);
  const double biased = (solve(250, false) - aligned).cwiseAbs().maxCoeff();
  const double split = (solve(250, true) - aligned).cwiseAbs().maxCoeff();
  CHECK(split < 0.25 * biased);
  CHECK(split < 2e-3 * aligned.maxCoeff());
}

TEST_CASE("rectangular tiling: the uniform load bounds the open-boundary loads at any volume") {
  const RectangleDomain rect(6.84, 4.90);
  const TorusLattice lat = place_lattice(rect, 36, Tiling::rectangular);
  for (double volume : {50.0, 500.0, 1500.0, 2000.0}) {
    CAPTURE(volume);
    const double ac = canonical_uniform_load(lat, volume, toy_link(), 1e-12, 120);
    const LoadVector v = load_fixed_point(lattice_problem(lat, Metric::euclidean, 8, volume));
    CHECK(ac >= v.load.maxCoeff());
  }
}
