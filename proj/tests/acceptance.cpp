// End-to-end acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [scenario_dir] [output_dir]

#include "canonet/io.hpp"
#include "canonet/numerics/elliptic.hpp"
#include "canonet/pipeline.hpp"
#include "oracles.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <numbers>
#include <random>

using namespace canonet;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

fs::path g_scenarios;
fs::path g_out;

// Physical scenarios run once and shared by several criteria.
const std::vector<std::string> kPhysical = {"a1_rect", "a1_hex", "a2_rect", "a2_hex"};
std::map<std::string, PipelineResult> g_runs;
std::map<std::string, std::shared_ptr<const ConformalMapPair>> g_maps;

Scenario scenario(const std::string& name) { return load_scenario(g_scenarios / (name + ".json")); }

RunOptions options(const std::string& dir) {
  RunOptions o;
  o.output = g_out / dir;
  return o;
}

const PipelineResult& physical_run(const std::string& name) {
  auto it = g_runs.find(name);
  if (it == g_runs.end()) it = g_runs.emplace(name, run_pipeline(scenario(name), options(name))).first;
  return it->second;
}

std::shared_ptr<const ConformalMapPair> map_for(const Scenario& s) {
  const std::string key = scenario_to_json(s)["polygon"].dump() + scenario_to_json(s)["corners"].dump();
  auto it = g_maps.find(key);
  if (it == g_maps.end())
    it = g_maps.emplace(key, std::make_shared<const ConformalMapPair>(
                                 std::make_shared<const StripMap>(StripMap::solve(s.quadrilateral()))))
             .first;
  return it->second;
}

std::vector<std::string> shipped() {
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(g_scenarios))
    if (e.path().extension() == ".json") names.push_back(e.path().stem().string());
  std::sort(names.begin(), names.end());
  return names;
}

Quadrilateral box(double w, double h) {
  VecXc v(4);
  v << Complex(0, 0), Complex(w, 0), Complex(w, h), Complex(0, h);
  return Quadrilateral(Polygon(v), {0, 1, 2, 3});
}

Outcome module_exactness() {
  double worst = 0;
  for (auto [w, h] : {std::pair{6.84, 4.90}, {2.0, 1.0}, {1.0, 3.0}, {5.0, 0.5}, {1.0, 1.0}})
    worst = std::max(worst, std::abs(conformal_module(box(w, h)) - h / w) / (h / w));
  const double square = std::abs(conformal_module(box(1, 1)) - 1);
  return {worst < 1e-8 && square < 1e-8, "max rel error " + fmt("%.2e", worst) + ", unit square " + fmt("%.2e", square)};
}

Outcome module_oracle() {
  VecXc v(6);
  v << Complex(0, 0), Complex(2, 0), Complex(2, 1), Complex(1, 1), Complex(1, 2), Complex(0, 2);
  const double m = conformal_module(Quadrilateral(Polygon(v), {0, 1, 4, 5}));
  // Grids of 400 and 800 nodes per side, extrapolated at the corner rate.
  const double ref = oracle::lshape_module(200);
  const double rel = std::abs(m - ref) / ref;
  return {rel < 1e-3, "m = " + fmt("%.10f", m) + ", Laplace " + fmt("%.10f", ref) + ", rel " + fmt("%.2e", rel)};
}

Outcome round_trip() {
  double worst = 0;
  int count = 0;
  for (const std::string& name : shipped()) {
    const auto cm = map_for(scenario(name));
    const RectangleDomain& r = cm->rectangle();
    std::mt19937_64 rng(1234);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int k = 0; k < 1000; ++k) {
      Complex w(u(rng) * r.width, u(rng) * r.height);
      const Complex back = cm->forward(cm->inverse(w), 1e-11).w;
      worst = std::max(worst, std::abs(back - w) / r.diameter());
    }
    ++count;
  }
  return {worst < 1e-6, std::to_string(count) + " scenarios x 1000 points, max " + fmt("%.2e", worst) + " x diam"};
}

Outcome conformality() {
  double worst = 0;
  int pairs = 0;
  for (const std::string& name : {"a1_rect", "a2_rect"}) {
    const auto cm = map_for(scenario(name));
    const RectangleDomain& r = cm->rectangle();
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> u(0.0, 1.0), ang(0, 2 * std::numbers::pi);
    const double h = 1e-6 * r.diameter();
    for (int k = 0; k < 50; ++k) {
      Complex w;
      bool near_corner = true;
      while (near_corner) {
        w = Complex(u(rng) * r.width, u(rng) * r.height);
        near_corner = false;
        for (int c = 0; c < 4; ++c) near_corner = near_corner || std::abs(w - cm->corner(c)) < 0.05 * r.diameter();
        near_corner = near_corner || !(w.real() > h && w.real() < r.width - h && w.imag() > h && w.imag() < r.height - h);
      }
      const double t1 = ang(rng), t2 = ang(rng);
      auto tangent = [&](double t) {
        const Complex d = std::polar(h, t);
        return cm->inverse(w + d) - cm->inverse(w - d);
      };
      const double before = std::arg(std::polar(1.0, t2 - t1));
      const double after = std::arg(tangent(t2) / tangent(t1));
      worst = std::max(worst, std::abs(std::arg(std::polar(1.0, after - before))));
      ++pairs;
    }
  }
  return {worst < 1e-4, std::to_string(pairs) + " curve pairs, max angle change " + fmt("%.2e", worst) + " rad"};
}

Outcome elliptic_oracle() {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> frac(-1, 1), par(0.0, 0.99);
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    const double m = par(rng);
    const double kappa = frac(rng) * complete_elliptic_k(m);
    worst = std::max(worst, std::abs(jacobi_sn(kappa, m) - oracle::sn_by_inversion(kappa, m)));
  }
  return {worst < 1e-9, "100 pairs, max |sn - sin(amplitude)| " + fmt("%.2e", worst)};
}

Outcome torus_metric() {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double w = 6.84, h = 4.90;
  auto point = [&] { return Complex(u(rng) * w, u(rng) * h); };
  double worst = 0;
  for (int i = 0; i < 10000; ++i) {
    const Complex a = point(), b = point();
    worst = std::max(worst, std::abs(torus_distance(a, b, w, h) - oracle::torus_distance(a, b, w, h)));
  }
  int violations = 0;
  for (int i = 0; i < 10000; ++i) {
    const Complex a = point(), b = point(), c = point();
    if (torus_distance(a, c, w, h) > torus_distance(a, b, w, h) + torus_distance(b, c, w, h) + 1e-12) ++violations;
  }
  return {worst <= 1e-12 && violations == 0,
          "max |d - brute force| " + fmt("%.1e", worst) + ", triangle violations " + std::to_string(violations)};
}

Outcome lattice_identities() {
  double worst_r = 0, worst_area = 0, worst_cell = 0;
  int lattices = 0;
  std::vector<RectangleDomain> rects = {RectangleDomain(6.84, 4.90), map_for(scenario("a1_hex"))->rectangle(),
                                        map_for(scenario("a2_hex"))->rectangle()};
  for (const RectangleDomain& rect : rects)
    for (Index L : {36, 64, 100, 144, 180, 196, 256, 324, 400}) {
      if (!lattice_feasible(rect, L, Tiling::hexagonal)) continue;
      const TorusLattice lat = place_lattice(rect, L, Tiling::hexagonal);
      const double w = lat.rect.width, h = lat.rect.height;
      worst_r = std::max(worst_r, std::abs(lat.radius - std::sqrt(2 * w * h / (3 * std::sqrt(3.0) * L))) / lat.radius);
      worst_area = std::max(worst_area, std::abs(L * 1.5 * std::sqrt(3.0) * lat.radius * lat.radius - w * h) / (w * h));
      const int kx = (400 + lat.lw - 1) / lat.lw, ky = (400 + 2 * lat.lh - 1) / (2 * lat.lh);
      const CellPartition part = voronoi_on_torus(
          lat.sites, w, h, SampleGrid::over_box({0, 0}, {w, h}, lat.lw * kx, 2 * lat.lh * ky));
      for (Index l = 0; l < lat.size; ++l)
        worst_cell = std::max(worst_cell, std::abs(part.areas(l) - w * h / double(L)) / (w * h / double(L)));
      ++lattices;
    }
  return {lattices > 0 && worst_r < 1e-9 && worst_area < 1e-9 && worst_cell < 1e-9,
          std::to_string(lattices) + " lattices; radius " + fmt("%.1e", worst_r) + ", area " + fmt("%.1e", worst_area) +
              ", Voronoi cell area " + fmt("%.1e", worst_cell)};
}

Outcome uniform_load_sweep() {
  const Scenario s = scenario("fig6_canonical");
  if (s.cell_grid < 250) return {false, "cell integral grid below 250"};
  const PipelineResult r = run_pipeline(s, options("fig6_canonical"));
  const bool dec_l = r.sweep["decreasing_in_L"].get<bool>();
  const bool dec_b = r.sweep["decreasing_in_beta"].get<bool>();
  int finite = 0;
  for (const auto& row : r.sweep["rows"]) finite += !row["alpha_c"].is_null();
  return {dec_l && dec_b && finite == 28, std::to_string(finite) + "/28 feasible; decreasing in L: " +
                                              (dec_l ? "yes" : "no") + ", in beta: " + (dec_b ? "yes" : "no")};
}

Outcome load_oracle() {
  // Two cells on a 2 x 1 torus against scalar bisection on the labelled samples.
  LoadProblem p;
  p.sites.resize(2);
  p.sites << Complex(0.5, 0.5), Complex(1.5, 0.5);
  p.partition = voronoi_on_torus(p.sites, 2, 1, SampleGrid::over_box({0, 0}, {2, 1}, 40, 20));
  p.masses = VecX::Constant(p.partition.grid.size(), 1.0 / double(p.partition.grid.size()));
  p.volume = 20;
  p.link.beta = 3;
  p.metric = Metric::periodic;
  p.period_w = 2;
  p.period_h = 1;
  p.split_edge_samples = false;
  const LoadVector v = load_fixed_point(p, 1e-13);
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
  const double err = std::max(std::abs(v.load(0) - a), std::abs(v.load(1) - a));

  // Symmetric periodic hexagonal lattice.
  const TorusLattice lat = place_lattice(RectangleDomain(6.84, 4.90), 64, Tiling::hexagonal);
  LoadProblem q;
  q.sites = lat.sites;
  q.partition = voronoi_on_torus(lat.sites, lat.rect.width, lat.rect.height,
                                 SampleGrid::over_box({0, 0}, {lat.rect.width, lat.rect.height}, lat.lw * 32,
                                                      2 * lat.lh * 16));
  q.masses = VecX::Constant(q.partition.grid.size(), 1.0 / double(q.partition.grid.size()));
  q.volume = 2400;
  q.metric = Metric::periodic;
  q.period_w = lat.rect.width;
  q.period_h = lat.rect.height;
  const LoadVector sym = load_fixed_point(q, 1e-12);
  const double spread = sym.load.maxCoeff() - sym.load.minCoeff();
  return {err < 1e-8 && spread < 1e-6,
          "two-cell error " + fmt("%.1e", err) + ", periodic spread " + fmt("%.1e", spread)};
}

Outcome worst_case_bound() {
  bool ok = true;
  std::string detail;
  for (const std::string& name : kPhysical) {
    const PipelineResult& r = physical_run(name);
    const double mx = r.loads.canonical_nonperiodic.load.maxCoeff();
    bool inside = true;
    for (Index l = 0; l < r.physical_sites.size(); ++l) inside = inside && r.map->polygon().contains(r.physical_sites(l));
    const bool holds = r.loads.alpha_c >= mx && inside;
    ok = ok && holds;
    detail += name + " " + fmt("%.4f", r.loads.alpha_c) + (r.loads.alpha_c >= mx ? " >= " : " < ") + fmt("%.4f", mx) +
              (inside ? "" : " (site outside)") + "; ";
  }
  return {ok, detail};
}

Outcome correlation_claim() {
  bool ok = true;
  std::string detail;
  for (const std::string& name : {"a1_rect", "a2_rect"}) {
    const double matched = physical_run(name).loads.correlation;
    Scenario s = scenario(name);
    s.aspect_mismatch = 0.25;
    RunOptions o = options(name + "_mismatch");
    o.emit.clear();
    const double mismatched = run_pipeline(s, o).loads.correlation;
    ok = ok && matched >= 0.9 && mismatched < matched;
    detail += name + " " + fmt("%.4f", matched) + " vs mismatched " + fmt("%.4f", mismatched) + "; ";
  }
  return {ok, detail};
}

Outcome demand_conservation() {
  bool ok = true;
  std::string detail;
  for (const std::string& name : kPhysical) {
    const PipelineResult& r = physical_run(name);
    const CheckReport rep =
        conservation_checks(*r.map, r.physical_demand, r.manifest.seed, 20, 600, 100000);
    const bool pass = rep.patches == 20 && rep.worst_patch_error < 1e-3 && rep.chi_square.p_value > 0.01;
    ok = ok && pass;
    detail += name + " err " + fmt("%.1e", rep.worst_patch_error) + " p " + fmt("%.3f", rep.chi_square.p_value) + "; ";
  }
  return {ok, detail};
}

Outcome determinism() {
  const PipelineResult& first = physical_run("a1_rect");
  const PipelineResult second = run_pipeline(scenario("a1_rect"), options("a1_rect_repeat"));
  int compared = 0, differing = 0;
  for (const FileRecord& f : first.manifest.files) {
    if (fs::path(f.path).extension() != ".csv") continue;
    ++compared;
    if (read_text_file(g_out / "a1_rect" / f.path) != read_text_file(g_out / "a1_rect_repeat" / f.path)) ++differing;
  }
  const bool manifests = first.manifest.to_json(false) == second.manifest.to_json(false);
  return {compared > 0 && differing == 0 && manifests,
          std::to_string(compared) + " CSV files, " + std::to_string(differing) + " differ; manifests " +
              (manifests ? "equal" : "differ") + " modulo timings"};
}

}  // namespace

int main(int argc, char** argv) {
  g_scenarios = argc > 1 ? fs::path(argv[1]) : fs::path(CANONET_SCENARIO_DIR);
  g_out = argc > 2 ? fs::path(argv[2]) : fs::temp_directory_path() / "canonet_acceptance";
  fs::create_directories(g_out);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"conformal module exactness", module_exactness},
      {"module vs Laplace oracle", module_oracle},
      {"round-trip fidelity", round_trip},
      {"conformality", conformality},
      {"elliptic oracle", elliptic_oracle},
      {"torus metric", torus_metric},
      {"lattice identities", lattice_identities},
      {"uniform load sweep", uniform_load_sweep},
      {"load fixed point oracle", load_oracle},
      {"worst-case bound", worst_case_bound},
      {"correlation claim", correlation_claim},
      {"demand conservation", demand_conservation},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::printf("%s %2zu %-28s %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", int(criteria.size()) - failed, criteria.size());
  return failed ? 1 : 0;
}
