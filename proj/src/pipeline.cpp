#include "canonet/pipeline.hpp"

#include "canonet/io.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cstdlib>
#include <functional>
#include <map>

namespace canonet {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------- scenario

namespace {

const std::set<std::string> kScenarioKeys = {
    "name",   "description", "polygon", "corners",   "demand", "physical_demand",
    "traffic", "link",       "tiling",  "L",         "target_load", "sweep",
    "grid",   "cell_grid",   "aspect_mismatch", "boundary_noise_multiplier", "output"};

[[noreturn]] void invalid(const std::string& field, const std::string& why) {
  throw ValidationError("scenario field '" + field + "': " + why);
}

double get_number(const json& obj, const std::string& key, const std::string& path) {
  const json& v = obj.at(key);
  if (!v.is_number()) invalid(path, "expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) invalid(path, "not finite");
  return x;
}

double positive(const json& obj, const std::string& key, const std::string& path, double fallback) {
  if (!obj.contains(key)) return fallback;
  const double v = get_number(obj, key, path);
  if (!(v > 0)) invalid(path, "must be positive");
  return v;
}

Index get_index(const json& v, const std::string& path) {
  if (!v.is_number_integer()) invalid(path, "expected an integer");
  return v.get<Index>();
}

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& path) {
  for (const auto& [key, value] : obj.items())
    if (!allowed.count(key)) invalid(path.empty() ? key : path + "." + key, "unknown field");
}

std::string file_digest(const fs::path& p) { return sha256_hex(read_text_file(p)); }

}  // namespace

Polygon Scenario::make_polygon() const {
  VecXc v(static_cast<Index>(polygon.size()));
  for (std::size_t i = 0; i < polygon.size(); ++i) v(Index(i)) = polygon[i];
  return Polygon(v);
}

Quadrilateral Scenario::quadrilateral() const { return Quadrilateral(make_polygon(), corners); }

Scenario parse_scenario(const json& doc, const fs::path& base_dir) {
  if (!doc.is_object()) throw ValidationError("scenario must be a JSON object");
  check_keys(doc, kScenarioKeys, "");
  Scenario s;
  s.base_dir = base_dir;

  if (!doc.contains("name") || !doc["name"].is_string() || doc["name"].get<std::string>().empty())
    invalid("name", "required non-empty string");
  s.name = doc["name"].get<std::string>();
  for (char c : s.name)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.'))
      invalid("name", "use letters, digits, '_', '-' or '.'");

  if (!doc.contains("polygon") || !doc["polygon"].is_array() || doc["polygon"].size() < 4)
    invalid("polygon", "required array of at least four [x, y] vertices");
  for (std::size_t i = 0; i < doc["polygon"].size(); ++i) {
    const json& p = doc["polygon"][i];
    const std::string path = "polygon[" + std::to_string(i) + "]";
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
      invalid(path, "expected [x, y]");
    s.polygon.emplace_back(p[0].get<double>(), p[1].get<double>());
  }
  if (!doc.contains("corners") || !doc["corners"].is_array() || doc["corners"].size() != 4)
    invalid("corners", "required array of four vertex indices");
  for (std::size_t j = 0; j < 4; ++j) s.corners[j] = get_index(doc["corners"][j], "corners");
  try {
    (void)s.quadrilateral();
  } catch (const DomainError& e) {
    invalid("polygon", e.what());
  }

  if (doc.contains("demand")) {
    const json& d = doc["demand"];
    if (d.is_string()) {
      s.demand.kind = d.get<std::string>();
      const auto& names = demand_preset_names();
      if (s.demand.kind != "induced" &&
          std::find(names.begin(), names.end(), s.demand.kind) == names.end())
        invalid("demand", "unknown preset '" + s.demand.kind + "'");
    } else if (d.is_object()) {
      check_keys(d, {"csv", "header"}, "demand");
      if (!d.contains("csv") || !d["csv"].is_string()) invalid("demand.csv", "required path");
      s.demand.kind = "csv";
      s.demand.csv = base_dir / d["csv"].get<std::string>();
      if (d.contains("header")) {
        if (!d["header"].is_string()) invalid("demand.header", "expected a path");
        s.demand.header = base_dir / d["header"].get<std::string>();
      }
    } else {
      invalid("demand", "expected a preset name or {\"csv\": ...}");
    }
  }
  if (doc.contains("physical_demand")) {
    const json& p = doc["physical_demand"];
    if (!p.is_string() || (p != "induced" && p != "target"))
      invalid("physical_demand", "expected \"induced\" or \"target\"");
    s.physical_uses_target = p == "target";
    if (s.physical_uses_target && s.demand.kind == "induced")
      invalid("physical_demand", "\"target\" needs a preset or CSV demand");
  }

  if (doc.contains("traffic")) {
    const json& t = doc["traffic"];
    if (!t.is_object()) invalid("traffic", "expected an object");
    check_keys(t, {"mean_session", "mean_interarrival", "r_min", "b_sys"}, "traffic");
    s.traffic.mean_session = positive(t, "mean_session", "traffic.mean_session", s.traffic.mean_session);
    s.traffic.mean_interarrival =
        positive(t, "mean_interarrival", "traffic.mean_interarrival", s.traffic.mean_interarrival);
    s.traffic.r_min = positive(t, "r_min", "traffic.r_min", s.traffic.r_min);
    s.traffic.b_sys = positive(t, "b_sys", "traffic.b_sys", s.traffic.b_sys);
  }
  s.link.r_min = s.traffic.r_min;
  s.link.b_sys = s.traffic.b_sys;
  if (doc.contains("link")) {
    const json& l = doc["link"];
    if (!l.is_object()) invalid("link", "expected an object");
    check_keys(l, {"beta", "noise"}, "link");
    if (l.contains("beta")) s.link.beta = get_number(l, "beta", "link.beta");
    if (l.contains("noise")) s.link.noise = get_number(l, "noise", "link.noise");
  }
  try {
    s.link.validate();
  } catch (const ValidationError& e) {
    invalid("link", e.what());
  }

  if (doc.contains("tiling")) {
    if (!doc["tiling"].is_string()) invalid("tiling", "expected a string");
    s.tiling = parse_tiling(doc["tiling"].get<std::string>());
  }

  const int modes = int(doc.contains("L")) + int(doc.contains("target_load")) + int(doc.contains("sweep"));
  if (modes != 1) invalid("L", "exactly one of L, target_load or sweep is required");
  if (doc.contains("L")) {
    s.L = get_index(doc["L"], "L");
    if (*s.L < 1) invalid("L", "must be positive");
  }
  if (doc.contains("target_load")) {
    s.target_load = get_number(doc, "target_load", "target_load");
    if (!(*s.target_load > 0 && *s.target_load <= 1)) invalid("target_load", "must lie in (0, 1]");
  }
  if (doc.contains("sweep")) {
    const json& w = doc["sweep"];
    if (!w.is_object()) invalid("sweep", "expected an object");
    check_keys(w, {"L", "beta"}, "sweep");
    SweepSpec sw;
    if (!w.contains("L") || !w["L"].is_array() || w["L"].empty()) invalid("sweep.L", "non-empty array required");
    for (const json& v : w["L"]) {
      sw.L.push_back(get_index(v, "sweep.L"));
      if (sw.L.back() < 1) invalid("sweep.L", "entries must be positive");
    }
    if (w.contains("beta")) {
      if (!w["beta"].is_array() || w["beta"].empty()) invalid("sweep.beta", "non-empty array expected");
      for (const json& v : w["beta"]) {
        if (!v.is_number() || !(v.get<double>() >= 2)) invalid("sweep.beta", "entries must be numbers >= 2");
        sw.beta.push_back(v.get<double>());
      }
    } else {
      sw.beta.push_back(s.link.beta);
    }
    s.sweep = sw;
  }

  if (doc.contains("grid")) {
    s.grid = int(get_index(doc["grid"], "grid"));
    if (s.grid < 10 || s.grid > 4000) invalid("grid", "must lie in [10, 4000]");
  }
  if (doc.contains("cell_grid")) {
    s.cell_grid = int(get_index(doc["cell_grid"], "cell_grid"));
    if (s.cell_grid < 10 || s.cell_grid > 4000) invalid("cell_grid", "must lie in [10, 4000]");
  }
  if (doc.contains("aspect_mismatch")) {
    s.aspect_mismatch = get_number(doc, "aspect_mismatch", "aspect_mismatch");
    if (!(s.aspect_mismatch > -0.9 && s.aspect_mismatch < 10)) invalid("aspect_mismatch", "must lie in (-0.9, 10)");
  }
  if (doc.contains("boundary_noise_multiplier")) {
    s.boundary_noise_multiplier = get_number(doc, "boundary_noise_multiplier", "boundary_noise_multiplier");
    if (!(s.boundary_noise_multiplier >= 0)) invalid("boundary_noise_multiplier", "must be nonnegative");
  }
  if (doc.contains("output")) {
    if (!doc["output"].is_string()) invalid("output", "expected a path");
    s.output = doc["output"].get<std::string>();
  }
  return s;
}

Scenario load_scenario(const fs::path& path) {
  json doc;
  try {
    doc = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw ValidationError("scenario " + path.string() + ": " + e.what());
  }
  return parse_scenario(doc, path.parent_path());
}

ojson scenario_to_json(const Scenario& s) {
  ojson j;
  j["name"] = s.name;
  auto poly = ojson::array();
  for (Complex p : s.polygon) poly.push_back({p.real(), p.imag()});
  j["polygon"] = poly;
  j["corners"] = s.corners;
  if (s.demand.kind == "csv") {
    j["demand"] = {{"csv_sha256", file_digest(s.demand.csv)},
                   {"header_sha256", s.demand.header.empty() ? "" : file_digest(s.demand.header)}};
  } else {
    j["demand"] = s.demand.kind;
  }
  j["physical_demand"] = s.physical_uses_target ? "target" : "induced";
  j["traffic"] = {{"mean_session", s.traffic.mean_session},
                  {"mean_interarrival", s.traffic.mean_interarrival},
                  {"r_min", s.traffic.r_min},
                  {"b_sys", s.traffic.b_sys}};
  j["link"] = {{"beta", s.link.beta}, {"noise", s.link.noise}};
  j["tiling"] = to_string(s.tiling);
  if (s.L) j["L"] = *s.L;
  if (s.target_load) j["target_load"] = *s.target_load;
  if (s.sweep) j["sweep"] = {{"L", s.sweep->L}, {"beta", s.sweep->beta}};
  j["grid"] = s.grid;
  j["cell_grid"] = s.cell_grid;
  j["aspect_mismatch"] = s.aspect_mismatch;
  j["boundary_noise_multiplier"] = s.boundary_noise_multiplier;
  return j;
}

std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

std::string scenario_hash(const Scenario& s) { return sha256_hex(scenario_to_json(s).dump()); }

std::uint64_t scenario_seed(const Scenario& s) {
  return std::stoull(scenario_hash(s).substr(0, 16), nullptr, 16);
}

// ---------------------------------------------------------------- manifest

ojson RunManifest::to_json(bool with_timings) const {
  ojson j;
  j["tool"] = "canonet";
  j["tool_version"] = tool_version;
  j["scenario"] = scenario_name;
  j["scenario_hash"] = scenario_hash;
  j["seed"] = seed;
  j["status"] = status;
  if (status != "ok") j["failure"] = {{"phase", failed_phase}, {"cause", failure}};
  j["module"] = module ? ojson(*module) : ojson();
  j["L"] = L ? ojson(*L) : ojson();
  if (!placement_note.empty()) j["placement_note"] = placement_note;
  j["alpha_c"] = alpha_c ? ojson(*alpha_c) : ojson();
  j["correlation"] = correlation ? ojson(*correlation) : ojson();
  auto ph = ojson::array();
  for (const PhaseRecord& p : phases) {
    ojson r = {{"name", p.name}, {"status", p.status}};
    if (with_timings) r["seconds"] = p.seconds;
    if (!p.error.empty()) r["error"] = p.error;
    ph.push_back(r);
  }
  j["phases"] = ph;
  auto files_json = ojson::array();
  for (const FileRecord& f : files)
    files_json.push_back({{"path", f.path}, {"sha256", f.sha256}, {"bytes", f.bytes}});
  j["files"] = files_json;
  return j;
}

PlotKind parse_plot_kind(const std::string& s) {
  if (s == "mapping-grid") return PlotKind::mapping_grid;
  if (s == "load-pattern") return PlotKind::load_pattern;
  if (s == "cdf") return PlotKind::cdf;
  if (s == "sites") return PlotKind::sites;
  throw ValidationError("unknown plot kind '" + s + "' (mapping-grid, load-pattern, cdf, sites)");
}

std::string to_string(PlotKind k) {
  switch (k) {
    case PlotKind::mapping_grid: return "mapping-grid";
    case PlotKind::load_pattern: return "load-pattern";
    case PlotKind::cdf: return "cdf";
    case PlotKind::sites: return "sites";
  }
  return "";
}

std::set<PlotKind> all_plot_kinds() {
  return {PlotKind::mapping_grid, PlotKind::load_pattern, PlotKind::cdf, PlotKind::sites};
}

fs::path resolve_output_dir(const Scenario& s, const RunOptions& opts) {
  if (!opts.output.empty()) return opts.output;
  if (!s.output.empty()) return s.output;
  if (const char* env = std::getenv("CANONET_OUT_DIR"); env && *env) return fs::path(env) / s.name;
  return fs::path("out") / s.name;
}

// ---------------------------------------------------------------- plot data

std::string mapping_grid_csv(const ConformalMapPair& cm, int lines, int points) {
  const double w = cm.rectangle().width, h = cm.rectangle().height;
  std::string out = "family,line,u,v,x,y\n";
  for (int family = 0; family < 2; ++family)
    for (int i = 0; i < lines; ++i)
      for (int k = 0; k < points; ++k) {
        const double a = double(i) / (lines - 1), b = double(k) / (points - 1);
        const Complex wp = family == 0 ? Complex(a * w, b * h) : Complex(b * w, a * h);
        const Complex z = cm.inverse(wp);
        out += std::string(family == 0 ? "u" : "v") + ',' + std::to_string(i) + ',' +
               format_number(wp.real()) + ',' + format_number(wp.imag()) + ',' +
               format_number(z.real()) + ',' + format_number(z.imag()) + '\n';
      }
  return out;
}

namespace {

std::string sites_csv(const PipelineResult& r) {
  const TorusLattice& lat = r.lattice;
  const RectangleDomain& rect = r.map->rectangle();
  std::string out = "cell,lattice_x,lattice_y,canonical_x,canonical_y,physical_x,physical_y,boundary\n";
  for (Index l = 0; l < lat.size; ++l) {
    const Complex s = lat.sites(l);
    const Complex c(s.real() * rect.width / lat.rect.width, s.imag() * rect.height / lat.rect.height);
    const Complex p = r.physical_sites(l);
    out += std::to_string(l) + ',' + format_number(s.real()) + ',' + format_number(s.imag()) + ',' +
           format_number(c.real()) + ',' + format_number(c.imag()) + ',' + format_number(p.real()) +
           ',' + format_number(p.imag()) + ',' + (lat.is_boundary(l) ? "1" : "0") + '\n';
  }
  return out;
}

std::string plot_file(PlotKind k) {
  switch (k) {
    case PlotKind::mapping_grid: return "mapping_grid.csv";
    case PlotKind::load_pattern: return "load_pattern.csv";
    case PlotKind::cdf: return "demand_cdf.csv";
    case PlotKind::sites: return "sites.csv";
  }
  return "";
}

std::string plot_content(const PipelineResult& r, PlotKind k) {
  switch (k) {
    case PlotKind::mapping_grid:
      if (!r.map) throw ValidationError("mapping-grid needs a solved map");
      return mapping_grid_csv(*r.map);
    case PlotKind::load_pattern:
      if (r.loads.physical.size() == 0) throw ValidationError("load-pattern needs a completed load run");
      return load_pattern_csv(r.loads);
    case PlotKind::cdf:
      if (r.physical_demand.grid.size() == 0) throw ValidationError("cdf needs a demand field");
      return cdf_csv(demand_cdf(r.physical_demand, 100));
    case PlotKind::sites:
      if (r.physical_sites.size() == 0) throw ValidationError("sites needs mapped sites");
      return sites_csv(r);
  }
  return "";
}

}  // namespace

std::vector<fs::path> emit_plot_data(const PipelineResult& r, PlotKind kind, const fs::path& dir) {
  const fs::path p = dir / plot_file(kind);
  write_text_file(p, plot_content(r, kind));
  return {p};
}

// ---------------------------------------------------------------- checks

ojson CheckReport::to_json() const {
  ojson j;
  j["patches"] = patches;
  j["worst_patch_error"] = worst_patch_error;
  j["chi_square"] = {{"statistic", chi_square.statistic},
                     {"dof", chi_square.dof},
                     {"p_value", chi_square.p_value},
                     {"passes_at_0.01", chi_square.p_value > 0.01}};
  return j;
}

CheckReport conservation_checks(const ConformalMapPair& cm, const DemandField& d, std::uint64_t seed,
                                int patches, int pullback_grid, Index samples) {
  const Polygon& poly = cm.polygon();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  CheckReport rep;
  if (patches > 0) {
    const CanonicalPullback pb = CanonicalPullback::build(cm, pullback_grid);
    const auto [lo, hi] = poly.bounding_box();
    const double scale = std::min((hi - lo).real(), (hi - lo).imag());
    for (int attempt = 0; rep.patches < patches && attempt < 100000; ++attempt) {
      const Complex c = lo + Complex(unit(rng) * (hi - lo).real(), unit(rng) * (hi - lo).imag());
      const double r = scale * (0.05 + 0.2 * unit(rng));
      if (!poly.contains(c) || poly.distance_to_boundary(c) < r) continue;
      const auto [lhs, rhs] = patch_conservation_check(pb, d, poly, Patch::disc(c, r));
      rep.worst_patch_error = std::max(rep.worst_patch_error, std::abs(lhs - rhs));
      ++rep.patches;
    }
  }
  if (samples > 0) {
    const auto pts = sample_demand(d, poly, samples, rng);
    VecX counts = VecX::Zero(100);
    const RectangleDomain& rect = cm.rectangle();
    for (Complex z : pts) {
      const Complex w = cm.forward(z, 1e-9).w;
      const int i = std::clamp(int(w.real() / rect.width * 10), 0, 9);
      const int j = std::clamp(int(w.imag() / rect.height * 10), 0, 9);
      counts(j * 10 + i) += 1;
    }
    rep.chi_square = chi_square_uniform(counts);
  }
  return rep;
}

// ---------------------------------------------------------------- pipeline

namespace {

class Run {
 public:
  Run(const Scenario& s, const RunOptions& opts) : dir_(resolve_output_dir(s, opts)) {
    m_.scenario_name = s.name;
    m_.scenario_hash = scenario_hash(s);
    m_.seed = opts.seed ? *opts.seed : scenario_seed(s);
    clear_previous();
    fs::create_directories(dir_);
  }

  const fs::path& dir() const { return dir_; }
  RunManifest& manifest() { return m_; }

  void write(const std::string& rel, const std::string& content) {
    write_text_file(dir_ / rel, content);
    m_.files.push_back({rel, sha256_hex(content), content.size()});
  }

  void phase(const std::string& name, const std::function<void()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    PhaseRecord rec{name, "ok", 0, ""};
    try {
      body();
    } catch (const std::exception& e) {
      rec.status = "failed";
      rec.error = e.what();
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      m_.phases.push_back(rec);
      m_.status = "failed";
      m_.failed_phase = name;
      m_.failure = e.what();
      write("FAILED", "phase " + name + ": " + e.what() + "\n");
      finish();
      throw;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    m_.phases.push_back(rec);
  }

  void finish() { write_text_file(dir_ / "manifest.json", m_.to_json().dump(2) + '\n'); }

 private:
  // Drop artifacts of an earlier run so the manifest describes the directory.
  void clear_previous() {
    const fs::path mf = dir_ / "manifest.json";
    if (!fs::exists(mf)) return;
    try {
      const json old = json::parse(read_text_file(mf));
      if (old.value("tool", "") != "canonet") return;
      for (const json& f : old.at("files")) fs::remove(dir_ / f.at("path").get<std::string>());
      fs::remove(mf);
    } catch (const std::exception&) {
      // Unreadable manifest: leave the directory alone.
    }
  }

  fs::path dir_;
  RunManifest m_;
};

std::shared_ptr<const StripMap> obtain_map(const Scenario& s, const RunOptions& opts) {
  const Quadrilateral q = s.quadrilateral();
  if (opts.map_json.empty()) return std::make_shared<const StripMap>(StripMap::solve(q));
  json doc;
  try {
    doc = json::parse(read_text_file(opts.map_json));
  } catch (const json::parse_error& e) {
    throw ValidationError("strip map " + opts.map_json.string() + ": " + e.what());
  }
  auto sm = std::make_shared<const StripMap>(strip_map_from_json(doc));
  const Quadrilateral& mq = sm->quadrilateral();
  bool same = mq.polygon().size() == q.polygon().size() && mq.corners() == q.corners();
  for (Index k = 0; same && k < q.polygon().size(); ++k)
    same = std::abs(mq.polygon().vertex(k) - q.polygon().vertex(k)) <= 1e-12 * q.polygon().diameter();
  if (!same) throw ValidationError("cached strip map does not belong to this scenario's quadrilateral");
  return sm;
}

std::optional<DemandField> target_demand(const Scenario& s, const Polygon& poly, int grid) {
  if (s.demand.kind == "induced") return std::nullopt;
  if (s.demand.kind == "csv") {
    const DemandField raw = import_demand(s.demand.csv, s.demand.header);
    DemandField d = resample(raw, poly, SampleGrid::over_polygon(poly, grid));
    if (s.demand.header.empty()) d.traffic = s.traffic;
    return d;
  }
  return demand_preset(s.demand.kind, poly, grid, s.traffic);
}

std::string strip_map_text(const StripMap& sm) { return strip_map_to_json(sm).dump(2) + '\n'; }

std::string demand_header(const DemandField& d, const std::string& csv) {
  ojson h;
  h["format"] = "canonet.demand";
  h["version"] = 1;
  h["volume"] = d.volume();
  h["mean_session"] = d.traffic.mean_session;
  h["mean_interarrival"] = d.traffic.mean_interarrival;
  h["r_min"] = d.traffic.r_min;
  h["b_sys"] = d.traffic.b_sys;
  h["nx"] = d.grid.nx;
  h["ny"] = d.grid.ny;
  h["csv"] = csv;
  return h.dump(2) + '\n';
}

// Map and demand phases shared by plan and analyze.
void map_and_demand(Run& run, const Scenario& s, const RunOptions& opts, int grid, PipelineResult& r) {
  run.phase("demand", [&] { r.target = target_demand(s, s.make_polygon(), grid); });
  run.phase("map", [&] {
    r.strip_map = obtain_map(s, opts);
    r.map = std::make_shared<const ConformalMapPair>(r.strip_map);
    run.manifest().module = r.strip_map->module();
    run.write("strip_map.json", strip_map_text(*r.strip_map));
    const DemandField induced = induced_density(*r.map, grid, DensityForm::jacobian, s.traffic, &r.induced_stats);
    if (r.target) r.target_distance = total_variation(induced, *r.target);
    r.physical_demand = s.physical_uses_target ? *r.target : induced;
    run.write("demand.csv", demand_csv(r.physical_demand));
    run.write("demand.json", demand_header(r.physical_demand, "demand.csv"));
  });
}

LoadProblem canonical_problem(const TorusLattice& lat, const Scenario& s, Metric metric, int grid) {
  LoadProblem p;
  p.sites = lat.sites;
  // Grid steps that divide the lattice translations give every cell the same
  // sample pattern; an unaligned grid biases individual cell areas.
  const int rows = lat.tiling == Tiling::hexagonal ? 2 * lat.lh : lat.lh;
  const int kx = std::max(1, (grid + lat.lw - 1) / lat.lw);
  const int ky = std::max(1, (grid + rows - 1) / rows);
  const double w = lat.rect.width, h = lat.rect.height;
  const SampleGrid aligned = SampleGrid::over_box({0, 0}, {w, h}, lat.lw * kx, rows * ky);
  if (metric == Metric::periodic) {
    p.partition = voronoi_on_torus(lat.sites, w, h, aligned);
  } else {
    VecXc corners(4);
    corners << Complex(0, 0), Complex(w, 0), Complex(w, h), Complex(0, h);
    p.partition = voronoi_in_polygon(lat.sites, Polygon(corners), aligned);
  }
  p.masses = VecX::Constant(p.partition.grid.size(), 1.0 / double(p.partition.grid.size()));
  p.volume = s.traffic.volume();
  p.link = s.link;
  p.metric = metric;
  p.period_w = lat.rect.width;
  p.period_h = lat.rect.height;
  for (Index l = 0; l < lat.size; ++l) p.boundary.push_back(lat.is_boundary(l));
  if (metric == Metric::euclidean && s.boundary_noise_multiplier != 1) {
    p.noise_multiplier = VecX::Ones(lat.size);
    for (Index l = 0; l < lat.size; ++l)
      if (lat.is_boundary(l)) p.noise_multiplier(l) = s.boundary_noise_multiplier;
  }
  return p;
}

RectangleDomain canonical_rectangle(const RectangleDomain& rect, double mismatch) {
  if (mismatch == 0) return rect;
  const double aspect = rect.aspect() * (1 + mismatch);
  const double w = std::sqrt(rect.area() / aspect);
  return RectangleDomain(w, w * aspect);
}

TorusLattice place_or_snap(const RectangleDomain& rect, Index L, Tiling t, std::string& note) {
  try {
    return place_lattice(rect, L, t);
  } catch (const PlacementError& e) {
    if (e.nearest_feasible() == 0) throw;
    note = "L = " + std::to_string(L) + " is not feasible for " + to_string(t) +
           " tiling; snapped to L = " + std::to_string(e.nearest_feasible());
    return place_lattice(rect, e.nearest_feasible(), t);
  }
}

void run_sweep(Run& run, const Scenario& s, PipelineResult& r) {
  run.phase("canonical", [&] {
    std::string csv = "beta,L,L_W,L_H,R,alpha_c,feasible\n";
    ojson table = ojson::array();
    std::map<double, std::vector<double>> by_beta;
    std::map<Index, std::vector<double>> by_l;
    for (double beta : s.sweep->beta) {
      LinkModel lm = s.link;
      lm.beta = beta;
      for (Index L : s.sweep->L) {
        const TorusLattice lat = place_lattice(r.map->rectangle(), L, s.tiling);
        double a = std::numeric_limits<double>::infinity();
        bool feasible = true;
        try {
          a = canonical_uniform_load(lat, s.traffic.volume(), lm, 1e-12, s.cell_grid);
        } catch (const InfeasibleDemandError&) {
          feasible = false;
        }
        csv += format_number(beta) + ',' + std::to_string(L) + ',' + std::to_string(lat.lw) + ',' +
               std::to_string(lat.lh) + ',' + format_number(lat.radius) + ',' +
               (feasible ? format_number(a) : std::string("inf")) + ',' + (feasible ? "1" : "0") + '\n';
        table.push_back({{"beta", beta}, {"L", L}, {"alpha_c", feasible ? ojson(a) : ojson()}});
        by_beta[beta].push_back(a);
        by_l[L].push_back(a);
      }
    }
    bool dec_l = true, dec_beta = true;
    for (const auto& [beta, v] : by_beta)
      for (std::size_t i = 1; i < v.size(); ++i) dec_l = dec_l && v[i] < v[i - 1];
    for (const auto& [L, v] : by_l)
      for (std::size_t i = 1; i < v.size(); ++i) dec_beta = dec_beta && v[i] < v[i - 1];
    r.sweep = {{"rows", table}, {"decreasing_in_L", dec_l}, {"decreasing_in_beta", dec_beta}};
    run.write("sweep.csv", csv);
    run.write("result.json", r.sweep.dump(2) + '\n');
  });
}

}  // namespace

PipelineResult run_pipeline(const Scenario& s, const RunOptions& opts) {
  Run run(s, opts);
  PipelineResult r;
  const int grid = opts.grid ? *opts.grid : s.grid;

  if (s.sweep) {
    run.phase("map", [&] {
      r.strip_map = obtain_map(s, opts);
      r.map = std::make_shared<const ConformalMapPair>(r.strip_map);
      run.manifest().module = r.strip_map->module();
      run.write("strip_map.json", strip_map_text(*r.strip_map));
    });
    run_sweep(run, s, r);
    if (opts.emit.count(PlotKind::mapping_grid)) run.write("mapping_grid.csv", mapping_grid_csv(*r.map));
    r.manifest = run.manifest();
    run.finish();
    return r;
  }

  map_and_demand(run, s, opts, grid, r);

  LoadVector periodic, nonperiodic;
  double alpha_c = 0;
  run.phase("canonical", [&] {
    const RectangleDomain rect = canonical_rectangle(r.map->rectangle(), s.aspect_mismatch);
    Index L = s.L ? *s.L : 0;
    if (s.target_load) {
      const DimensioningResult d =
          dimension_network(*s.target_load, rect, s.traffic.volume(), s.link, s.tiling, s.cell_grid);
      L = d.L;
    }
    r.lattice = place_or_snap(rect, L, s.tiling, run.manifest().placement_note);
    run.manifest().L = r.lattice.size;
    alpha_c = canonical_uniform_load(r.lattice, s.traffic.volume(), s.link, 1e-12, s.cell_grid);
    run.manifest().alpha_c = alpha_c;
    periodic = load_fixed_point(canonical_problem(r.lattice, s, Metric::periodic, grid));
    periodic.uniform = alpha_c;
    nonperiodic = load_fixed_point(canonical_problem(r.lattice, s, Metric::euclidean, grid));
    run.write("lattice.json", lattice_to_json(r.lattice).dump(2) + '\n');
    run.write("load_canonical_periodic.csv", load_vector_csv(periodic));
    run.write("load_canonical_nonperiodic.csv", load_vector_csv(nonperiodic));
  });

  run.phase("physical", [&] {
    const TorusLattice& lat = r.lattice;
    const RectangleDomain& rect = r.map->rectangle();
    const Polygon& poly = r.map->polygon();
    r.physical_sites.resize(lat.size);
    for (Index l = 0; l < lat.size; ++l) {
      const Complex c(lat.sites(l).real() * rect.width / lat.rect.width,
                      lat.sites(l).imag() * rect.height / lat.rect.height);
      r.physical_sites(l) = r.map->inverse(c);
      if (!poly.contains(r.physical_sites(l))) throw DomainError("mapped site falls outside the polygon");
    }
    LoadProblem p;
    p.sites = r.physical_sites;
    p.partition = voronoi_in_polygon(r.physical_sites, poly, r.physical_demand.grid);
    p.masses = r.physical_demand.masses();
    p.volume = s.traffic.volume();
    p.link = s.link;
    for (Index l = 0; l < lat.size; ++l) p.boundary.push_back(lat.is_boundary(l));
    if (s.boundary_noise_multiplier != 1) {
      p.noise_multiplier = VecX::Ones(lat.size);
      for (Index l = 0; l < lat.size; ++l)
        if (lat.is_boundary(l)) p.noise_multiplier(l) = s.boundary_noise_multiplier;
    }
    LoadVector physical = load_fixed_point(p);
    const double m = r.strip_map->module();
    r.loads = compare_domains(std::move(periodic), std::move(nonperiodic), std::move(physical), alpha_c,
                              std::abs(lat.rect.aspect() - m) / m);
    run.manifest().correlation = r.loads.correlation;

    ojson res = scenario_result_json(r.loads);
    res["module"] = m;
    res["L"] = lat.size;
    res["L_W"] = lat.lw;
    res["L_H"] = lat.lh;
    res["tiling"] = to_string(lat.tiling);
    res["lattice_distortion"] = lat.distortion();
    res["aspect_mismatch"] = s.aspect_mismatch;
    res["induced_raw_integral"] = r.induced_stats.raw_integral;
    res["target_total_variation"] = r.target_distance ? ojson(*r.target_distance) : ojson();
    res["physical_demand"] = s.physical_uses_target ? "target" : "induced";
    run.write("load_physical.csv", load_vector_csv(r.loads.physical));
    run.write("result.json", res.dump(2) + '\n');
  });

  if (opts.check_patches > 0) {
    run.phase("checks", [&] {
      const CheckReport rep = conservation_checks(*r.map, r.physical_demand, run.manifest().seed,
                                                  opts.check_patches, opts.check_pullback, opts.check_samples);
      r.checks = rep.to_json();
      run.write("checks.json", r.checks.dump(2) + '\n');
    });
  }

  run.phase("emit", [&] {
    for (PlotKind k : opts.emit) run.write(plot_file(k), plot_content(r, k));
  });
  r.manifest = run.manifest();
  run.finish();
  return r;
}

RunManifest run_solve_map(const Scenario& s, const RunOptions& opts) {
  Run run(s, opts);
  run.phase("map", [&] {
    const auto sm = obtain_map(s, opts);
    run.manifest().module = sm->module();
    run.write("strip_map.json", strip_map_text(*sm));
  });
  run.finish();
  return run.manifest();
}

RunManifest run_analyze(const Scenario& s, const RunOptions& opts) {
  Run run(s, opts);
  PipelineResult r;
  const int grid = opts.grid ? *opts.grid : s.grid;
  map_and_demand(run, s, opts, grid, r);
  run.phase("checks", [&] {
    const int patches = opts.check_patches > 0 ? opts.check_patches : 20;
    const CheckReport rep =
        conservation_checks(*r.map, r.physical_demand, run.manifest().seed, patches, opts.check_pullback,
                            opts.check_samples);
    ojson j = rep.to_json();
    j["induced_raw_integral"] = r.induced_stats.raw_integral;
    j["target_total_variation"] = r.target_distance ? ojson(*r.target_distance) : ojson();
    run.write("checks.json", j.dump(2) + '\n');
  });
  run.finish();
  return run.manifest();
}

}  // namespace canonet
