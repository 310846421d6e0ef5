#include "canonet/loadcoupling.hpp"

#include "canonet/io.hpp"
#include "canonet/numerics/summation.hpp"

#include <algorithm>
#include <cmath>

namespace canonet {

namespace {

// Gains are stored as floats once the matrix gets large; loads then carry
// about 1e-7 relative error, far below the modelling error of the grid.
constexpr Index kDoubleGainLimit = 4000000;

double metric_distance(Complex a, Complex b, const LoadProblem& p) {
  if (p.metric == Metric::periodic) return torus_distance(a, b, p.period_w, p.period_h);
  return std::abs(a - b);
}

// Quadrature points of the load integrals: one per sample, or one per owning
// cell for samples that straddle a cell edge.
struct LoadSamples {
  std::vector<Complex> point;
  std::vector<double> mass;
  std::vector<Index> serving;
};

// Site displacement seen from z, wrapped to the nearest image on the torus.
Complex displacement(Complex z, Complex site, const LoadProblem& p) {
  Complex d = site - z;
  if (p.metric == Metric::periodic)
    d = Complex(d.real() - p.period_w * std::round(d.real() / p.period_w),
                d.imag() - p.period_h * std::round(d.imag() / p.period_h));
  return d;
}

// Nearest site with the translation-invariant tie-break of the torus
// partition: larger dx, then larger dy.
Index nearest_site(Complex z, const LoadProblem& p, const std::vector<Index>& candidates) {
  Index best = -1;
  Complex best_d;
  double best_r = std::numeric_limits<double>::infinity();
  for (Index l : candidates) {
    const Complex d = displacement(z, p.sites(l), p);
    const double r = std::abs(d);
    const double tie = 1e-12 * (r + best_r);
    if (best < 0 || r < best_r - tie ||
        (r <= best_r + tie && (d.real() > best_d.real() || (d.real() == best_d.real() && d.imag() > best_d.imag())))) {
      best = l;
      best_d = d;
      best_r = r;
    }
  }
  return best;
}

constexpr int kSplit = 8;

LoadSamples load_samples(const LoadProblem& p) {
  const SampleGrid& g = p.partition.grid;
  const Index L = p.sites.size();
  const double diag = std::hypot(g.dx, g.dy);
  LoadSamples q;
  std::vector<Index> candidates;
  std::vector<Index> all(static_cast<std::size_t>(L));
  for (Index l = 0; l < L; ++l) all[std::size_t(l)] = l;
  for (Index k = 0; k < p.masses.size(); ++k) {
    if (!(p.masses(k) > 0)) continue;
    const Complex z = g.center(k);
    double d1 = std::numeric_limits<double>::infinity();
    for (Index l = 0; l < L; ++l) d1 = std::min(d1, metric_distance(z, p.sites(l), p));
    candidates.clear();
    for (Index l = 0; l < L; ++l)
      if (metric_distance(z, p.sites(l), p) <= d1 + diag) candidates.push_back(l);
    const Index label = p.partition.labels(k);
    if (!p.split_edge_samples && label >= 0) {
      q.point.push_back(z);
      q.mass.push_back(p.masses(k));
      q.serving.push_back(label);
      continue;
    }
    if (candidates.size() == 1 && (label < 0 || label == candidates[0])) {
      q.point.push_back(z);
      q.mass.push_back(p.masses(k));
      q.serving.push_back(candidates[0]);
      continue;
    }
    // Split the sample: each owning cell gets its share of the mass at the
    // centroid of the sub-samples it owns.
    std::vector<std::pair<Index, std::pair<Complex, int>>> parts;
    for (int i = 0; i < kSplit; ++i)
      for (int j = 0; j < kSplit; ++j) {
        const Complex off(((i + 0.5) / kSplit - 0.5) * g.dx, ((j + 0.5) / kSplit - 0.5) * g.dy);
        const Index own = nearest_site(z + off, p, candidates.size() > 1 ? candidates : all);
        auto it = std::find_if(parts.begin(), parts.end(), [&](const auto& e) { return e.first == own; });
        if (it == parts.end()) {
          parts.push_back({own, {off, 1}});
        } else {
          it->second.first += off;
          ++it->second.second;
        }
      }
    for (const auto& [own, acc] : parts) {
      q.point.push_back(z + acc.first / double(acc.second));
      q.mass.push_back(p.masses(k) * acc.second / double(kSplit * kSplit));
      q.serving.push_back(own);
    }
  }
  return q;
}

template <typename Scalar>
LoadVector iterate_loads(const LoadProblem& p, const LoadSamples& q, double min_distance, double tol,
                         int max_iter) {
  const std::vector<Index>& serving = q.serving;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  const Index L = p.sites.size();
  const Index S = Index(serving.size());
  const LinkModel& lm = p.link;

  Mat gain(L, S);
  VecX signal(S), noise(S), mass(S);
  for (Index s = 0; s < S; ++s) {
    const Complex z = q.point[std::size_t(s)];
    for (Index l = 0; l < L; ++l) {
      const double d = std::max(metric_distance(z, p.sites(l), p), min_distance);
      gain(l, s) = Scalar(std::pow(d, -lm.beta));
    }
    const Index own = serving[std::size_t(s)];
    signal(s) = std::pow(std::max(metric_distance(z, p.sites(own), p), min_distance), -lm.beta);
    // The serving term stays out of the matrix: subtracting it from the total
    // would cancel catastrophically near the site.
    gain(own, s) = 0;
    const double mult = p.noise_multiplier.size() ? p.noise_multiplier(own) : 1.0;
    noise(s) = lm.noise * mult;
    mass(s) = q.mass[std::size_t(s)];
  }

  auto update = [&](const VecX& alpha) {
    const Vec total = gain.transpose() * alpha.cast<Scalar>();
    std::vector<CompensatedSum<double>> acc(static_cast<std::size_t>(L));
    for (Index s = 0; s < S; ++s) {
      const Index own = serving[std::size_t(s)];
      const double interference = double(total(s)) + noise(s);
      if (interference <= 0) continue;  // no interference: unbounded rate
      const double bandwidth = lm.r_min / LinkModel::link(signal(s) / interference);
      acc[std::size_t(own)] += mass(s) * bandwidth;
    }
    VecX next(L);
    for (Index l = 0; l < L; ++l) next(l) = p.volume * acc[std::size_t(l)].value() / lm.b_sys;
    return next;
  };

  LoadVector out;
  VecX alpha = VecX::Ones(L);
  VecX prev = alpha;
  double change = 0;
  for (int it = 1; it <= max_iter; ++it) {
    const VecX raw = update(alpha);
    prev = alpha;
    alpha = raw.cwiseMin(1.0);
    change = (alpha - prev).cwiseAbs().maxCoeff();
    out.iterations = it;
    if (change <= tol) {
      const VecX again = update(alpha);
      out.load = alpha;
      out.clamped.resize(std::size_t(L));
      for (Index l = 0; l < L; ++l) out.clamped[std::size_t(l)] = again(l) > 1.0;
      out.residual = (again.cwiseMin(1.0) - alpha).cwiseAbs().maxCoeff();
      return out;
    }
  }
  throw LoadConvergenceError("load_fixed_point: no convergence after " + std::to_string(max_iter) +
                                 " iterations",
                             alpha, prev, change);
}

}  // namespace

CellLoad cell_load(double cell_volume, double mean_bandwidth, double b_sys) {
  if (!(b_sys > 0)) throw DomainError("cell_load: b_sys must be positive");
  if (!(cell_volume >= 0) || !(mean_bandwidth >= 0))
    throw DomainError("cell_load: volume and bandwidth must be nonnegative");
  const double raw = cell_volume * mean_bandwidth / b_sys;
  return raw > 1 ? CellLoad{1.0, true} : CellLoad{raw, false};
}

double LoadVector::mean() const { return load.size() ? load.mean() : 0.0; }

double LoadVector::mean_where(bool boundary_cells) const {
  double sum = 0;
  int n = 0;
  for (Index l = 0; l < load.size(); ++l)
    if (std::size_t(l) < boundary.size() && boundary[std::size_t(l)] == boundary_cells) {
      sum += load(l);
      ++n;
    }
  return n ? sum / n : std::numeric_limits<double>::quiet_NaN();
}

LoadVector load_fixed_point(const LoadProblem& p, double tol, int max_iter) {
  const Index L = p.sites.size();
  if (L < 1) throw DomainError("load_fixed_point: no sites");
  if (p.partition.areas.size() != L || p.partition.labels.size() != p.partition.grid.size())
    throw DomainError("load_fixed_point: partition does not match the sites");
  if (p.masses.size() != p.partition.grid.size())
    throw DomainError("load_fixed_point: demand grid does not match the partition");
  if (!(p.volume >= 0)) throw DomainError("load_fixed_point: volume must be nonnegative");
  if (p.noise_multiplier.size() && p.noise_multiplier.size() != L)
    throw DomainError("load_fixed_point: one noise multiplier per cell");
  if (p.metric == Metric::periodic && !(p.period_w > 0 && p.period_h > 0))
    throw DomainError("load_fixed_point: periodic metric needs the torus periods");
  p.link.validate();

  const SampleGrid& g = p.partition.grid;
  const double diam = std::hypot(g.dx * g.nx, g.dy * g.ny);
  const double min_distance = 1e-9 * diam;
  const LoadSamples q = load_samples(p);

  LoadVector out = Index(q.serving.size()) * L > kDoubleGainLimit
                       ? iterate_loads<float>(p, q, min_distance, tol, max_iter)
                       : iterate_loads<double>(p, q, min_distance, tol, max_iter);
  out.boundary = p.boundary;
  if (out.boundary.size() != std::size_t(L)) out.boundary.assign(std::size_t(L), false);
  return out;
}

namespace {

struct CellSamples {
  VecX own;    // d_*^-beta
  VecX other;  // sum of the remaining terms
};

CellSamples sample_fundamental_cell(const TorusLattice& lat, const LinkModel& lm, int n) {
  CellSamples c;
  c.own.resize(Index(n) * n);
  c.other.resize(Index(n) * n);
  const double w = lat.rect.width, h = lat.rect.height;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const Complex r0 = lat.sites(0) + ((i + 0.5) / n) * lat.a1 + ((j + 0.5) / n) * lat.a2;
      const Complex r(r0.real() - w * std::floor(r0.real() / w), r0.imag() - h * std::floor(r0.imag() / h));
      const double total = total_received_power(r, lat, lm);
      const Index s = serving_site(r, lat);
      const double own = std::pow(torus_distance(r, lat.sites(s), w, h), -lm.beta);
      c.own(Index(i) * n + j) = own;
      c.other(Index(i) * n + j) = total - own;
    }
  return c;
}

double load_map(const CellSamples& c, const TorusLattice& lat, double volume, const LinkModel& lm,
                double alpha) {
  CompensatedSum<double> acc;
  for (Index k = 0; k < c.own.size(); ++k) {
    const double interference = alpha * c.other(k) + lm.noise;
    if (interference <= 0) continue;
    acc += 1 / LinkModel::link(c.own(k) / interference);
  }
  return volume / double(lat.size) * lm.r_min / lm.b_sys * acc.value() / double(c.own.size());
}

}  // namespace

double canonical_load_map(const TorusLattice& lat, double volume, const LinkModel& lm, double alpha,
                          int grid_n) {
  lm.validate();
  return load_map(sample_fundamental_cell(lat, lm, grid_n), lat, volume, lm, alpha);
}

double canonical_uniform_load(const TorusLattice& lat, double volume, const LinkModel& lm, double tol,
                              int grid_n) {
  lm.validate();
  if (!(volume > 0)) throw DomainError("canonical_uniform_load: volume must be positive");
  if (grid_n < 2) throw DomainError("canonical_uniform_load: grid must be at least 2");
  const CellSamples c = sample_fundamental_cell(lat, lm, grid_n);
  auto excess = [&](double a) { return load_map(c, lat, volume, lm, a) - a; };

  const double at_full = excess(1.0) + 1.0;
  if (at_full > 1.0)
    throw InfeasibleDemandError("demand exceeds capacity at L = " + std::to_string(lat.size) +
                                    ": full-load requirement " + format_number(at_full),
                                at_full);
  if (at_full == 1.0) return 1.0;

  double lo = 1e-6, hi = 1.0;
  // The load map is increasing in alpha; very small volumes put the root
  // below the default bracket.
  while (excess(lo) <= 0 && lo > 1e-300) {
    hi = lo;
    lo *= 1e-3;
  }
  for (int it = 0; it < 200 && hi - lo > tol * hi; ++it) {
    const double mid = lo < 1e-6 * hi ? std::sqrt(lo * hi) : 0.5 * (lo + hi);
    (excess(mid) > 0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

DimensioningResult dimension_network(double target, const RectangleDomain& rect, double volume,
                                     const LinkModel& lm, Tiling tiling, int grid_n, Index max_l) {
  if (!(target > 0 && target <= 1)) throw DomainError("dimension_network: target must lie in (0, 1]");
  std::vector<Index> candidates;
  // Without noise a lone cell sees no interference and carries no load, which
  // would make L = 1 the answer to every target.
  for (Index L = lm.noise > 0 ? 1 : 2; L <= max_l; ++L)
    if (lattice_feasible(rect, L, tiling)) candidates.push_back(L);
  if (candidates.empty()) throw DimensioningError("dimension_network: no feasible L", max_l, 1.0);

  std::vector<double> cache(candidates.size(), -1);
  auto load = [&](std::size_t i) {
    if (cache[i] < 0) {
      try {
        cache[i] = canonical_uniform_load(place_lattice(rect, candidates[i], tiling), volume, lm,
                                          1e-12, grid_n);
      } catch (const InfeasibleDemandError&) {
        cache[i] = std::numeric_limits<double>::infinity();
      }
    }
    return cache[i];
  };

  const std::size_t last = candidates.size() - 1;
  if (load(last) > target)
    throw DimensioningError("dimension_network: target " + format_number(target) +
                                " not reached up to L = " + std::to_string(candidates[last]) +
                                " (load " + format_number(load(last)) + ")",
                            candidates[last], load(last));
  std::size_t lo = 0, hi = last;  // load(hi) <= target
  if (load(0) <= target) hi = 0;
  while (hi - lo > 1) {
    const std::size_t mid = (lo + hi) / 2;
    (load(mid) <= target ? hi : lo) = mid;
  }
  // Lattice shape changes with L, so the sweep is only nearly monotone; step
  // down while smaller counts still meet the target.
  while (hi > 0 && load(hi - 1) <= target) --hi;
  const TorusLattice lat = place_lattice(rect, candidates[hi], tiling);
  return {candidates[hi], load(hi), lat.lw, lat.lh};
}

double pearson_correlation(const VecX& a, const VecX& b) {
  if (a.size() != b.size() || a.size() < 2) throw DomainError("pearson_correlation: size mismatch");
  const double ma = a.mean(), mb = b.mean();
  CompensatedSum<double> sab, saa, sbb;
  for (Index i = 0; i < a.size(); ++i) {
    sab += (a(i) - ma) * (b(i) - mb);
    saa += (a(i) - ma) * (a(i) - ma);
    sbb += (b(i) - mb) * (b(i) - mb);
  }
  if (saa.value() <= 0 || sbb.value() <= 0) return (a - b).cwiseAbs().maxCoeff() <= 1e-12 ? 1.0 : 0.0;
  return std::clamp(sab.value() / std::sqrt(saa.value() * sbb.value()), -1.0, 1.0);
}

ScenarioResult compare_domains(LoadVector periodic, LoadVector nonperiodic, LoadVector physical,
                               double alpha_c, double module_match) {
  if (periodic.size() != nonperiodic.size() || nonperiodic.size() != physical.size())
    throw std::logic_error("compare_domains: load vectors have different cell counts");
  ScenarioResult r;
  r.alpha_c = alpha_c;
  r.module_match = module_match;
  r.correlation = nonperiodic.size() >= 2 ? pearson_correlation(nonperiodic.load, physical.load) : 1.0;
  r.worst_case_holds = alpha_c >= nonperiodic.load.maxCoeff();
  r.canonical_periodic = std::move(periodic);
  r.canonical_nonperiodic = std::move(nonperiodic);
  r.physical = std::move(physical);
  return r;
}

std::string load_vector_csv(const LoadVector& v) {
  std::string out = "cell,load,clamped,boundary\n";
  for (Index l = 0; l < v.size(); ++l) {
    const bool b = std::size_t(l) < v.boundary.size() && v.boundary[std::size_t(l)];
    const bool c = std::size_t(l) < v.clamped.size() && v.clamped[std::size_t(l)];
    out += std::to_string(l) + ',' + format_number(v.load(l)) + ',' + (c ? "1" : "0") + ',' +
           (b ? "1" : "0") + '\n';
  }
  return out;
}

std::string load_pattern_csv(const ScenarioResult& r) {
  std::string out = "cell,periodic,canonical,physical,boundary\n";
  for (Index l = 0; l < r.physical.size(); ++l) {
    const auto& b = r.canonical_nonperiodic.boundary;
    out += std::to_string(l) + ',' + format_number(r.canonical_periodic.load(l)) + ',' +
           format_number(r.canonical_nonperiodic.load(l)) + ',' + format_number(r.physical.load(l)) +
           ',' + (std::size_t(l) < b.size() && b[std::size_t(l)] ? "1" : "0") + '\n';
  }
  return out;
}

namespace {

nlohmann::ordered_json load_stats(const LoadVector& v) {
  nlohmann::ordered_json j;
  j["cells"] = v.size();
  j["mean"] = v.mean();
  j["min"] = v.size() ? v.load.minCoeff() : 0.0;
  j["max"] = v.size() ? v.load.maxCoeff() : 0.0;
  const double b = v.mean_where(true), i = v.mean_where(false);
  j["boundary_mean"] = std::isnan(b) ? nlohmann::ordered_json() : nlohmann::ordered_json(b);
  j["interior_mean"] = std::isnan(i) ? nlohmann::ordered_json() : nlohmann::ordered_json(i);
  j["clamped"] = std::count(v.clamped.begin(), v.clamped.end(), true);
  j["iterations"] = v.iterations;
  j["residual"] = v.residual;
  return j;
}

}  // namespace

nlohmann::ordered_json scenario_result_json(const ScenarioResult& r) {
  nlohmann::ordered_json j;
  j["alpha_c"] = r.alpha_c;
  j["correlation"] = r.correlation;
  j["module_match"] = r.module_match;
  j["worst_case_holds"] = r.worst_case_holds;
  j["canonical_periodic"] = load_stats(r.canonical_periodic);
  j["canonical_nonperiodic"] = load_stats(r.canonical_nonperiodic);
  j["physical"] = load_stats(r.physical);
  return j;
}

}  // namespace canonet
