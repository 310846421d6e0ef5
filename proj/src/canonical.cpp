#include "canonet/canonical.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

namespace canonet {

namespace {

const double kSqrt3 = std::sqrt(3.0);

struct Factorization {
  int lw;
  int lh;
  double distortion;
};

// Lattice rectangle (W0, H0) for a factorization, before scaling.
std::pair<double, double> natural_size(const RectangleDomain& rect, Tiling t, int lw, int lh) {
  if (t == Tiling::rectangular) return {rect.width, rect.height};
  const double r = hex_radius(rect, Index(lw) * lh);
  return {1.5 * r * lw, kSqrt3 * r * lh};
}

double factor_distortion(const RectangleDomain& rect, Tiling t, int lw, int lh) {
  double ratio;
  if (t == Tiling::rectangular) {
    ratio = (rect.width / lw) / (rect.height / lh);
  } else {
    const auto [w0, h0] = natural_size(rect, t, lw, lh);
    ratio = (rect.width / w0) / (rect.height / h0);
  }
  return std::max(ratio, 1 / ratio);
}

std::optional<Factorization> best_factorization(const RectangleDomain& rect, Index L, Tiling t) {
  if (L < 1 || L > 1000000) return std::nullopt;
  std::optional<Factorization> best;
  for (Index lw = 1; lw <= L; ++lw) {
    if (L % lw != 0) continue;
    // Hexagonal columns alternate their offset, so the torus needs an even count.
    if (t == Tiling::hexagonal && lw % 2 != 0) continue;
    const int w = int(lw), h = int(L / lw);
    const double d = factor_distortion(rect, t, w, h);
    if (!best || d < best->distortion - 1e-12) best = Factorization{w, h, d};
  }
  if (best && best->distortion > kMaxLatticeDistortion) return std::nullopt;
  return best;
}

double wrap_delta(double d, double period) { return d - period * std::round(d / period); }

}  // namespace

std::string to_string(Tiling t) { return t == Tiling::hexagonal ? "hexagonal" : "rectangular"; }

Tiling parse_tiling(const std::string& s) {
  if (s == "hexagonal" || s == "hex") return Tiling::hexagonal;
  if (s == "rectangular" || s == "rect") return Tiling::rectangular;
  throw ValidationError("unknown tiling '" + s + "' (expected hexagonal or rectangular)");
}

double hex_radius(const RectangleDomain& rect, Index L) {
  if (L < 1) throw DomainError("hex_radius: L must be positive");
  return std::sqrt(2 * rect.area() / (3 * kSqrt3 * double(L)));
}

bool lattice_feasible(const RectangleDomain& rect, Index L, Tiling tiling) {
  return best_factorization(rect, L, tiling).has_value();
}

TorusLattice place_lattice(const RectangleDomain& rect, Index L, Tiling tiling) {
  if (L < 1) throw DomainError("place_lattice: L must be positive");
  const auto f = best_factorization(rect, L, tiling);
  if (!f) {
    Index nearest = 0;
    for (Index d = 1; d <= 4 * L + 8 && nearest == 0; ++d) {
      if (L - d >= 1 && best_factorization(rect, L - d, tiling)) nearest = L - d;
      else if (best_factorization(rect, L + d, tiling)) nearest = L + d;
    }
    throw PlacementError("cannot place " + std::to_string(L) + " " + to_string(tiling) +
                             " cells on the rectangle; nearest feasible L is " +
                             std::to_string(nearest),
                         nearest);
  }

  TorusLattice lat;
  lat.tiling = tiling;
  lat.requested = rect;
  lat.size = L;
  lat.lw = f->lw;
  lat.lh = f->lh;
  const auto [w0, h0] = natural_size(rect, tiling, f->lw, f->lh);
  lat.rect = RectangleDomain(w0, h0);
  lat.scale_x = rect.width / w0;
  lat.scale_y = rect.height / h0;

  double step_w, step_h, stagger;
  if (tiling == Tiling::hexagonal) {
    const double r = hex_radius(rect, L);
    lat.radius = r;
    step_w = 1.5 * r;
    step_h = kSqrt3 * r;
    stagger = kSqrt3 * r / 2;
    lat.shift_w = 3 * r / 4;
    lat.shift_h = kSqrt3 * r / 4;
    lat.a1 = Complex(1.5 * r, kSqrt3 * r / 2);
    lat.a2 = Complex(0, kSqrt3 * r);
  } else {
    step_w = w0 / f->lw;
    step_h = h0 / f->lh;
    stagger = 0;
    lat.radius = 0.5 * std::hypot(step_w, step_h);
    lat.shift_w = step_w / 2;
    lat.shift_h = step_h / 2;
    lat.a1 = Complex(step_w, 0);
    lat.a2 = Complex(0, step_h);
  }

  lat.sites.resize(L);
  lat.column.resize(L);
  lat.row.resize(L);
  for (int w = 0; w < f->lw; ++w)
    for (int h = 0; h < f->lh; ++h) {
      const Index l = lat.site_index(w, h);
      lat.sites(l) = Complex(w * step_w + lat.shift_w, h * step_h + (w % 2) * stagger + lat.shift_h);
      lat.column(l) = w;
      lat.row(l) = h;
    }

  // Nearest torus neighbours; a relation that only exists across the wrap
  // marks the cell as a boundary cell of the plain rectangle.
  const std::size_t k = tiling == Tiling::hexagonal ? 6 : 4;
  lat.adjacency.assign(std::size_t(L), {});
  lat.boundary.assign(std::size_t(L), false);
  const double tol = 1e-9 * lat.rect.diameter();
  for (Index l = 0; l < L; ++l) {
    std::vector<std::pair<double, Index>> d;
    for (Index m = 0; m < L; ++m)
      if (m != l) d.emplace_back(torus_distance(lat.sites(l), lat.sites(m), w0, h0), m);
    std::sort(d.begin(), d.end());
    for (std::size_t i = 0; i < std::min(k, d.size()); ++i) {
      const Index m = d[i].second;
      lat.adjacency[std::size_t(l)].push_back(m);
      if (std::abs(lat.sites(l) - lat.sites(m)) > d[i].first + tol) lat.boundary[std::size_t(l)] = true;
    }
  }
  return lat;
}

void LinkModel::validate() const {
  if (!(beta >= 2) || !std::isfinite(beta)) throw ValidationError("link: beta must be at least 2");
  if (!(noise >= 0) || !std::isfinite(noise)) throw ValidationError("link: noise must be nonnegative");
  if (!(b_sys > 0) || !std::isfinite(b_sys)) throw ValidationError("link: b_sys must be positive");
  if (!(r_min > 0) || !std::isfinite(r_min)) throw ValidationError("link: r_min must be positive");
}

double total_received_power(Complex r, const TorusLattice& lat, const LinkModel& lm) {
  const double w0 = lat.rect.width, h0 = lat.rect.height;
  const double eps = 1e-12 * lat.rect.diameter();
  const double step_w = lat.a1.real();
  const double step_h = lat.a2.imag();
  const double stagger = lat.tiling == Tiling::hexagonal ? lat.a1.imag() : 0.0;
  double total = 0;
  for (int w = 0; w < lat.lw; ++w)
    for (int h = 0; h < lat.lh; ++h) {
      const double x = w * step_w + lat.shift_w;
      const double y = h * step_h + (w % 2) * stagger + lat.shift_h;
      const double d = std::hypot(wrap_delta(r.real() - x, w0), wrap_delta(r.imag() - y, h0));
      if (d <= eps) throw SingularityError("total_received_power: point coincides with a site");
      total += std::pow(d, -lm.beta);
    }
  return total;
}

Index serving_site(Complex r, const TorusLattice& lat) {
  Index best = 0;
  double dbest = std::numeric_limits<double>::infinity();
  for (Index l = 0; l < lat.size; ++l) {
    const double d = torus_distance(r, lat.sites(l), lat.rect.width, lat.rect.height);
    if (d < dbest) {
      dbest = d;
      best = l;
    }
  }
  return best;
}

double sinr_at(Complex r, const TorusLattice& lat, const LinkModel& lm, double alpha) {
  if (!(alpha > 0 && alpha <= 1)) throw DomainError("sinr_at: load must lie in (0, 1]");
  const Index s = serving_site(r, lat);
  const double d = torus_distance(r, lat.sites(s), lat.rect.width, lat.rect.height);
  if (d <= 1e-12 * lat.rect.diameter()) throw SingularityError("sinr_at: point coincides with a site");
  const double signal = std::pow(d, -lm.beta);
  const double interference = alpha * (total_received_power(r, lat, lm) - signal) + lm.noise;
  return signal / interference;
}

nlohmann::ordered_json lattice_to_json(const TorusLattice& lat) {
  nlohmann::ordered_json j;
  j["tiling"] = to_string(lat.tiling);
  j["L"] = lat.size;
  j["L_W"] = lat.lw;
  j["L_H"] = lat.lh;
  j["R"] = lat.radius;
  j["shift_w"] = lat.shift_w;
  j["shift_h"] = lat.shift_h;
  j["width"] = lat.rect.width;
  j["height"] = lat.rect.height;
  j["requested"] = {{"width", lat.requested.width}, {"height", lat.requested.height}};
  j["scale"] = {lat.scale_x, lat.scale_y};
  auto sites = nlohmann::ordered_json::array();
  for (Index l = 0; l < lat.size; ++l) sites.push_back({lat.sites(l).real(), lat.sites(l).imag()});
  j["sites"] = sites;
  return j;
}

}  // namespace canonet
