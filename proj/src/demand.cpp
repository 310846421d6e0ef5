#include "canonet/demand.hpp"

#include "canonet/io.hpp"
#include "canonet/numerics/summation.hpp"

#include <boost/math/special_functions/gamma.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace canonet {

namespace {

constexpr int kSub = 8;  // subsamples per cell side on boundary cells

Complex subsample(const SampleGrid& g, Index k, int a, int b) {
  const Complex c = g.center(k);
  return c + Complex(((a + 0.5) / kSub - 0.5) * g.dx, ((b + 0.5) / kSub - 0.5) * g.dy);
}

double half_diagonal(const SampleGrid& g) { return 0.5 * std::hypot(g.dx, g.dy); }

// Segments ab and cd cross at a point interior to both.
bool segments_cross(Complex a, Complex b, Complex c, Complex d) {
  auto orient = [](Complex p, Complex q, Complex r) {
    const double v = (q.real() - p.real()) * (r.imag() - p.imag()) -
                     (q.imag() - p.imag()) * (r.real() - p.real());
    return (v > 0) - (v < 0);
  };
  const int o1 = orient(a, b, c), o2 = orient(a, b, d), o3 = orient(c, d, a), o4 = orient(c, d, b);
  return o1 * o2 < 0 && o3 * o4 < 0;
}

struct Bump {
  double u, v, sigma, amplitude;
};

struct Preset {
  double base;
  std::vector<Bump> bumps;
};

const std::map<std::string, Preset>& presets() {
  static const std::map<std::string, Preset> table = {
      {"uniform", {1.0, {}}},
      {"hotspot_a1", {0.25, {{0.30, 0.62, 0.14, 1.0}, {0.72, 0.38, 0.17, 0.6}}}},
      {"hotspot_a2",
       {0.15, {{0.22, 0.30, 0.10, 1.0}, {0.55, 0.70, 0.13, 0.8}, {0.82, 0.35, 0.09, 0.7}}}},
  };
  return table;
}

Complex derivative_off_corners(const ConformalMapPair& cm, Complex w) {
  try {
    return cm.derivative(w);
  } catch (const SingularityError&) {
    const Complex centre = 0.5 * cm.corner(2);
    const double step = 1e-7 * cm.rectangle().diameter();
    return cm.derivative(w + step * (centre - w) / std::abs(centre - w));
  }
}

}  // namespace

void TrafficParams::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(std::isfinite(v) && v > 0))
      throw ValidationError(std::string("traffic parameter ") + name + " must be positive");
  };
  positive(mean_session, "mean_session");
  positive(mean_interarrival, "mean_interarrival");
  positive(r_min, "r_min");
  positive(b_sys, "b_sys");
}

double DemandField::integral() const {
  CompensatedSum<double> acc;
  for (Index k = 0; k < density.size(); ++k) acc += density(k) * weight(k);
  return acc.value();
}

void DemandField::normalize() {
  const double total = integral();
  if (!(total > 0) || !std::isfinite(total))
    throw DomainError("DemandField::normalize: field has no positive mass");
  density /= total;
}

DemandField CanonicalDemand::sample(int grid_n) const {
  DemandField d;
  d.grid = SampleGrid::over_rectangle(rect, grid_n);
  d.density = VecX::Constant(d.grid.size(), density());
  d.weight = VecX::Constant(d.grid.size(), d.grid.cell_area());
  d.traffic = traffic;
  return d;
}

SupportSampling support_sampling(const Polygon& p, const SampleGrid& grid) {
  SupportSampling s;
  s.weight.resize(grid.size());
  s.eval_point.resize(grid.size());
  const double hd = half_diagonal(grid);
  for (Index k = 0; k < grid.size(); ++k) {
    const Complex c = grid.center(k);
    s.eval_point(k) = c;
    if (p.distance_to_boundary(c) >= hd) {
      s.weight(k) = p.contains(c) ? grid.cell_area() : 0.0;
      continue;
    }
    int inside = 0;
    Complex sum = 0;
    for (int b = 0; b < kSub; ++b)
      for (int a = 0; a < kSub; ++a) {
        const Complex z = subsample(grid, k, a, b);
        if (p.contains(z)) {
          ++inside;
          sum += z;
        }
      }
    s.weight(k) = grid.cell_area() * inside / double(kSub * kSub);
    if (inside == 0) continue;
    Complex e = sum / double(inside);
    if (!p.contains(e)) {
      double best = std::numeric_limits<double>::infinity();
      for (int b = 0; b < kSub; ++b)
        for (int a = 0; a < kSub; ++a) {
          const Complex z = subsample(grid, k, a, b);
          if (p.contains(z) && std::abs(z - e) < best) {
            best = std::abs(z - e);
            s.eval_point(k) = z;
          }
        }
    } else {
      s.eval_point(k) = e;
    }
  }
  return s;
}

DemandField induced_density(const ConformalMapPair& cm, int grid_n, DensityForm form,
                            const TrafficParams& traffic, InducedDensityStats* stats) {
  if (grid_n < 2) throw DomainError("induced_density: grid must be at least 2 x 2");
  traffic.validate();
  const Polygon& poly = cm.polygon();
  DemandField d;
  d.traffic = traffic;
  d.grid = SampleGrid::over_polygon(poly, grid_n);
  SupportSampling sup = support_sampling(poly, d.grid);
  d.weight = sup.weight;
  d.density = VecX::Zero(d.grid.size());

  InducedDensityStats st;
  std::vector<char> ok(static_cast<std::size_t>(d.grid.size()), 0);
  const double area = cm.rectangle().area();
  CompensatedSum<double> raw;
  for (int j = 0; j < d.grid.ny; ++j) {
    std::optional<Complex> guess;
    for (int i = 0; i < d.grid.nx; ++i) {
      const Index k = Index(j) * d.grid.nx + i;
      if (d.weight(k) <= 0) {
        guess.reset();
        continue;
      }
      ++st.samples;
      const Complex z = sup.eval_point(k);
      Complex w;
      try {
        ForwardSolution f = cm.forward(z, 1e-10, guess);
        if (f.residual > 1e-8) f = cm.forward(z, 1e-10);
        if (f.residual > 1e-8) {
          guess.reset();
          continue;
        }
        w = f.w;
      } catch (const std::exception&) {
        guess.reset();
        continue;
      }
      guess = w;
      Complex der;
      try {
        der = derivative_off_corners(cm, w);
      } catch (const std::exception&) {
        continue;
      }
      const double jac = 1 / (area * std::norm(der));
      raw += jac * d.weight(k);
      double value = jac;
      if (form == DensityForm::divergence) {
        value = 1 / (2 * der.real());
        if (!(value > 0)) {
          value = 0;
          ++st.clamped_negative;
        }
      }
      if (!std::isfinite(value)) continue;
      d.density(k) = value;
      ok[static_cast<std::size_t>(k)] = 1;
    }
  }

  // Fill failed samples (only ever a handful at corners) from neighbours.
  for (Index k = 0; k < d.grid.size(); ++k) {
    if (d.weight(k) <= 0 || ok[static_cast<std::size_t>(k)]) continue;
    ++st.filled;
    const int i = int(k % d.grid.nx), j = int(k / d.grid.nx);
    double sum = 0;
    int n = 0;
    for (int r = 1; n == 0 && r < std::max(d.grid.nx, d.grid.ny); ++r)
      for (int b = std::max(0, j - r); b <= std::min(d.grid.ny - 1, j + r); ++b)
        for (int a = std::max(0, i - r); a <= std::min(d.grid.nx - 1, i + r); ++a) {
          const Index m = Index(b) * d.grid.nx + a;
          if (ok[static_cast<std::size_t>(m)]) {
            sum += d.density(m);
            ++n;
          }
        }
    if (n == 0) throw ConvergenceError("induced_density: forward map failed everywhere", VecX(), 0);
    d.density(k) = sum / n;
  }
  st.raw_integral = raw.value();
  d.normalize();
  if (stats) *stats = st;
  return d;
}

DemandField uniform_density(const Polygon& p, int grid_n, const TrafficParams& traffic) {
  return demand_preset("uniform", p, grid_n, traffic);
}

const std::vector<std::string>& demand_preset_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& [name, preset] : presets()) v.push_back(name);
    return v;
  }();
  return names;
}

DemandField demand_preset(const std::string& name, const Polygon& p, int grid_n,
                          const TrafficParams& traffic) {
  const auto it = presets().find(name);
  if (it == presets().end()) throw ValidationError("unknown demand preset '" + name + "'");
  if (grid_n < 2) throw DomainError("demand_preset: grid must be at least 2 x 2");
  traffic.validate();
  const Preset& preset = it->second;
  DemandField d;
  d.traffic = traffic;
  d.grid = SampleGrid::over_polygon(p, grid_n);
  const SupportSampling sup = support_sampling(p, d.grid);
  d.weight = sup.weight;
  d.density = VecX::Zero(d.grid.size());
  const auto [lo, hi] = p.bounding_box();
  const Complex span = hi - lo;
  for (Index k = 0; k < d.grid.size(); ++k) {
    if (d.weight(k) <= 0) continue;
    const Complex z = sup.eval_point(k) - lo;
    const double u = z.real() / span.real(), v = z.imag() / span.imag();
    double value = preset.base;
    for (const Bump& b : preset.bumps) {
      const double r2 = (u - b.u) * (u - b.u) + (v - b.v) * (v - b.v);
      value += b.amplitude * std::exp(-r2 / (2 * b.sigma * b.sigma));
    }
    d.density(k) = value;
  }
  d.normalize();
  return d;
}

DemandField resample(const DemandField& src, const Polygon& p, const SampleGrid& grid) {
  DemandField d;
  d.traffic = src.traffic;
  d.grid = grid;
  const SupportSampling sup = support_sampling(p, grid);
  d.weight = sup.weight;
  d.density = VecX::Zero(grid.size());
  const SampleGrid& g = src.grid;
  for (Index k = 0; k < grid.size(); ++k) {
    if (d.weight(k) <= 0) continue;
    const Complex z = sup.eval_point(k) - g.origin;
    const int i = std::clamp(int(std::floor(z.real() / g.dx)), 0, g.nx - 1);
    const int j = std::clamp(int(std::floor(z.imag() / g.dy)), 0, g.ny - 1);
    d.density(k) = src.density(Index(j) * g.nx + i);
  }
  d.normalize();
  return d;
}

double total_variation(const DemandField& a, const DemandField& b) {
  if (!(a.grid == b.grid)) throw DomainError("total_variation: fields live on different grids");
  CompensatedSum<double> acc;
  for (Index k = 0; k < a.grid.size(); ++k)
    acc += std::abs(a.density(k) * a.weight(k) - b.density(k) * b.weight(k));
  return 0.5 * acc.value();
}

CdfTable demand_cdf(const DemandField& d, int bins) {
  if (bins < 1) throw DomainError("demand_cdf: bins must be positive");
  std::vector<double> p;
  for (Index k = 0; k < d.grid.size(); ++k)
    if (d.in_support(k)) p.push_back(d.density(k) * d.weight(k));
  if (p.empty()) throw DomainError("demand_cdf: empty support");
  std::sort(p.begin(), p.end());
  const auto n = static_cast<long long>(p.size());
  CdfTable t;
  t.probability.resize(bins);
  t.cdf.resize(bins);
  for (int k = 1; k <= bins; ++k) {
    const long long idx = (k * n + bins - 1) / bins - 1;
    t.probability(k - 1) = p[static_cast<std::size_t>(std::max(0LL, idx))];
    t.cdf(k - 1) = double(k) / bins;
  }
  return t;
}

Patch Patch::disc(Complex centre, double radius) {
  if (!(radius >= 0)) throw DomainError("Patch::disc: negative radius");
  Patch p;
  p.centre_ = centre;
  p.radius_ = radius;
  return p;
}

Patch Patch::polygon(Polygon poly) {
  Patch p;
  p.is_disc_ = false;
  p.poly_.push_back(std::move(poly));
  return p;
}

bool Patch::contains(Complex z) const {
  if (is_disc_) return std::abs(z - centre_) < radius_;
  return poly_.front().contains(z);
}

double Patch::boundary_distance(Complex z) const {
  if (is_disc_) return std::abs(std::abs(z - centre_) - radius_);
  return poly_.front().distance_to_boundary(z);
}

void Patch::require_inside(const Polygon& domain) const {
  if (is_disc_) {
    if (radius_ == 0) return;
    if (!domain.contains(centre_) || domain.distance_to_boundary(centre_) < radius_)
      throw DomainError("patch is not inside the domain");
    return;
  }
  const Polygon& q = poly_.front();
  for (Index k = 0; k < q.size(); ++k) {
    if (!domain.contains(q.vertex(k))) throw DomainError("patch is not inside the domain");
    for (Index e = 0; e < domain.size(); ++e)
      if (segments_cross(q.vertex(k), q.vertex(k + 1), domain.vertex(e), domain.vertex(e + 1)))
        throw DomainError("patch is not inside the domain");
  }
}

CanonicalPullback CanonicalPullback::build(const ConformalMapPair& cm, int grid_n) {
  if (grid_n < 1) throw DomainError("CanonicalPullback: grid must be positive");
  CanonicalPullback pb;
  pb.grid = SampleGrid::over_rectangle(cm.rectangle(), grid_n);
  pb.images.resize(pb.grid.size());
  for (Index k = 0; k < pb.grid.size(); ++k) pb.images(k) = cm.inverse(pb.grid.center(k));
  return pb;
}

std::pair<double, double> patch_conservation_check(const CanonicalPullback& pullback,
                                                   const DemandField& d, const Polygon& domain,
                                                   const Patch& patch) {
  patch.require_inside(domain);
  if (patch.empty()) return {0.0, 0.0};

  const double hd = half_diagonal(d.grid);
  CompensatedSum<double> lhs;
  for (Index k = 0; k < d.grid.size(); ++k) {
    if (!d.in_support(k)) continue;
    const Complex c = d.grid.center(k);
    const double mass = d.density(k) * d.weight(k);
    if (patch.boundary_distance(c) >= hd) {
      if (patch.contains(c)) lhs += mass;
      continue;
    }
    int in_domain = 0, in_both = 0;
    for (int b = 0; b < kSub; ++b)
      for (int a = 0; a < kSub; ++a) {
        const Complex z = subsample(d.grid, k, a, b);
        if (!domain.contains(z)) continue;
        ++in_domain;
        if (patch.contains(z)) ++in_both;
      }
    if (in_domain > 0) lhs += mass * in_both / in_domain;
  }

  Index count = 0;
  for (Index k = 0; k < pullback.images.size(); ++k)
    if (patch.contains(pullback.images(k))) ++count;
  return {lhs.value(), double(count) / double(pullback.images.size())};
}

std::pair<double, double> patch_conservation_check(const ConformalMapPair& cm, const DemandField& d,
                                                   const Patch& patch, int grid_n) {
  patch.require_inside(cm.polygon());
  if (patch.empty()) return {0.0, 0.0};
  return patch_conservation_check(CanonicalPullback::build(cm, grid_n), d, cm.polygon(), patch);
}

std::vector<Complex> sample_demand(const DemandField& d, const Polygon& p, Index count,
                                   std::mt19937_64& rng) {
  const VecX m = d.masses();
  std::discrete_distribution<Index> pick(m.data(), m.data() + m.size());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Complex> out;
  out.reserve(static_cast<std::size_t>(count));
  while (Index(out.size()) < count) {
    const Index k = pick(rng);
    const Complex corner = d.grid.center(k) - Complex(0.5 * d.grid.dx, 0.5 * d.grid.dy);
    for (int attempt = 0;; ++attempt) {
      if (attempt > 100000) throw DomainError("sample_demand: support cell outside polygon");
      const Complex z = corner + Complex(unit(rng) * d.grid.dx, unit(rng) * d.grid.dy);
      if (p.contains(z)) {
        out.push_back(z);
        break;
      }
    }
  }
  return out;
}

ChiSquareResult chi_square_uniform(const VecX& counts) {
  if (counts.size() < 2) throw DomainError("chi_square_uniform: need at least two bins");
  const double expected = counts.sum() / double(counts.size());
  if (!(expected > 0)) throw DomainError("chi_square_uniform: no observations");
  ChiSquareResult r;
  for (Index k = 0; k < counts.size(); ++k)
    r.statistic += (counts(k) - expected) * (counts(k) - expected) / expected;
  r.dof = int(counts.size() - 1);
  r.p_value = boost::math::gamma_q(0.5 * r.dof, 0.5 * r.statistic);
  return r;
}

std::string demand_csv(const DemandField& d) {
  std::string out = "x,y,density\n";
  for (Index k = 0; k < d.grid.size(); ++k) {
    const Complex c = d.grid.center(k);
    out += format_number(c.real()) + ',' + format_number(c.imag()) + ',' +
           format_number(d.density(k)) + '\n';
  }
  return out;
}

void export_demand(const DemandField& d, const std::filesystem::path& csv_path,
                   const std::filesystem::path& header_path) {
  nlohmann::ordered_json h;
  h["format"] = "canonet.demand";
  h["version"] = 1;
  h["volume"] = d.volume();
  h["mean_session"] = d.traffic.mean_session;
  h["mean_interarrival"] = d.traffic.mean_interarrival;
  h["r_min"] = d.traffic.r_min;
  h["b_sys"] = d.traffic.b_sys;
  h["nx"] = d.grid.nx;
  h["ny"] = d.grid.ny;
  h["csv"] = csv_path.filename().string();
  write_text_file(csv_path, demand_csv(d));
  write_text_file(header_path, h.dump(2) + '\n');
}

DemandField import_demand(const std::filesystem::path& csv_path,
                          const std::filesystem::path& header_path) {
  DemandField d;
  if (!header_path.empty()) {
    nlohmann::json h;
    try {
      h = nlohmann::json::parse(read_text_file(header_path));
      d.traffic.mean_session = h.at("mean_session").get<double>();
      d.traffic.mean_interarrival = h.at("mean_interarrival").get<double>();
      if (h.contains("r_min")) d.traffic.r_min = h["r_min"].get<double>();
      if (h.contains("b_sys")) d.traffic.b_sys = h["b_sys"].get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("demand header: ") + e.what());
    }
    d.traffic.validate();
    if (h.contains("volume") &&
        std::abs(h["volume"].get<double>() - d.volume()) > 1e-12 * d.volume())
      throw ValidationError("demand header: volume differs from mean_session / mean_interarrival");
  }

  std::istringstream in(read_text_file(csv_path));
  std::string line;
  std::vector<double> xs, ys, vs;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    if (first) {
      first = false;
      if (!f.empty() && !f[0].empty() && std::isalpha(static_cast<unsigned char>(f[0][0])))
        continue;
    }
    if (f.size() != 3) throw ValidationError("demand CSV: expected three columns x,y,density");
    xs.push_back(parse_number(f[0], "x"));
    ys.push_back(parse_number(f[1], "y"));
    const double v = parse_number(f[2], "density");
    if (v < 0) throw ValidationError("demand CSV: negative density");
    vs.push_back(v);
  }
  if (vs.empty()) throw ValidationError("demand CSV: no rows");

  auto axis = [](std::vector<double> v, const char* name) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end(),
                        [](double a, double b) { return std::abs(a - b) <= 1e-9 * (1 + std::abs(a)); }),
            v.end());
    const double step = v.size() > 1 ? (v.back() - v.front()) / double(v.size() - 1) : 1.0;
    for (std::size_t i = 1; i < v.size(); ++i)
      if (std::abs(v[i] - v[i - 1] - step) > 1e-6 * step)
        throw ValidationError(std::string("demand CSV: ") + name + " samples are not evenly spaced");
    return std::pair{v, step};
  };
  const auto [ux, dx] = axis(xs, "x");
  const auto [uy, dy] = axis(ys, "y");
  const int nx = int(ux.size()), ny = int(uy.size());
  if (Index(nx) * ny != Index(vs.size()))
    throw ValidationError("demand CSV: rows do not form a complete grid");
  d.grid = SampleGrid::over_box(Complex(ux.front() - dx / 2, uy.front() - dy / 2),
                                Complex(ux.back() + dx / 2, uy.back() + dy / 2), nx, ny);
  d.density = VecX::Zero(d.grid.size());
  d.weight = VecX::Zero(d.grid.size());
  for (std::size_t r = 0; r < vs.size(); ++r) {
    const int i = int(std::lround((xs[r] - ux.front()) / dx));
    const int j = int(std::lround((ys[r] - uy.front()) / dy));
    const Index k = Index(j) * nx + i;
    d.density(k) = vs[r];
    if (vs[r] > 0) d.weight(k) = d.grid.cell_area();
  }
  d.normalize();
  return d;
}

std::string cdf_csv(const CdfTable& t) {
  std::string out = "probability,cdf\n";
  for (Index k = 0; k < t.cdf.size(); ++k)
    out += format_number(t.probability(k)) + ',' + format_number(t.cdf(k)) + '\n';
  return out;
}

}  // namespace canonet
