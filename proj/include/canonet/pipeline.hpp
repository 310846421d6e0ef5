#pragma once

// Scenario ingestion and the four-phase run: demand, map, canonical lattice
// and loads, physical loads. Artifacts are CSV/JSON with a digest manifest.

#include "canonet/canonical.hpp"
#include "canonet/demand.hpp"
#include "canonet/loadcoupling.hpp"
#include "canonet/scmap.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace canonet {

inline constexpr const char* kToolVersion = "1.0.0";

struct DemandSpec {
  /// "induced" (the density the map uniformizes), a preset name, or "csv".
  std::string kind = "induced";
  std::filesystem::path csv;
  std::filesystem::path header;
};

struct SweepSpec {
  std::vector<Index> L;
  std::vector<double> beta;
};

struct Scenario {
  std::string name;
  std::vector<Complex> polygon;
  std::array<Index, 4> corners{0, 1, 2, 3};
  DemandSpec demand;
  /// Drive the physical loads with the target demand instead of the induced one.
  bool physical_uses_target = false;
  TrafficParams traffic;
  LinkModel link;
  Tiling tiling = Tiling::hexagonal;
  std::optional<Index> L;
  std::optional<double> target_load;
  std::optional<SweepSpec> sweep;
  int grid = 500;       // demand and partition grids
  int cell_grid = 250;  // fundamental-cell integral for alpha_c
  double aspect_mismatch = 0;
  double boundary_noise_multiplier = 1;
  std::filesystem::path output;
  /// Directory relative paths in the document resolve against.
  std::filesystem::path base_dir;

  Polygon make_polygon() const;
  Quadrilateral quadrilateral() const;
};

/// Parse and validate; throws ValidationError with the offending field.
Scenario parse_scenario(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
Scenario load_scenario(const std::filesystem::path& path);
nlohmann::ordered_json scenario_to_json(const Scenario& s);

/// SHA-256 of the canonical JSON form of the scenario (hex).
std::string scenario_hash(const Scenario& s);
/// Seed derived from the first 16 hex digits of the scenario hash.
std::uint64_t scenario_seed(const Scenario& s);

std::string sha256_hex(const std::string& data);

struct PhaseRecord {
  std::string name;
  std::string status;  // "ok" or "failed"
  double seconds = 0;
  std::string error;
};

struct FileRecord {
  std::string path;  // relative to the output directory
  std::string sha256;
  std::uintmax_t bytes = 0;
};

struct RunManifest {
  std::string tool_version = kToolVersion;
  std::string scenario_name;
  std::string scenario_hash;
  std::uint64_t seed = 0;
  std::optional<double> module;
  std::optional<Index> L;
  std::string placement_note;
  std::optional<double> alpha_c;
  std::optional<double> correlation;
  std::string status = "ok";
  std::string failed_phase;
  std::string failure;
  std::vector<PhaseRecord> phases;
  std::vector<FileRecord> files;

  nlohmann::ordered_json to_json(bool with_timings = true) const;
};

enum class PlotKind { mapping_grid, load_pattern, cdf, sites };
PlotKind parse_plot_kind(const std::string& s);
std::string to_string(PlotKind k);
std::set<PlotKind> all_plot_kinds();

struct RunOptions {
  std::filesystem::path output;  // overrides the scenario
  std::optional<std::uint64_t> seed;
  std::optional<int> grid;
  std::set<PlotKind> emit = all_plot_kinds();
  /// Cached strip map document to skip the parameter solve.
  std::filesystem::path map_json;
  /// Pullback resolution and patch count for the conservation checks; 0 skips them.
  int check_patches = 0;
  int check_pullback = 600;
  Index check_samples = 100000;
};

/// Everything a run computes, kept for callers that inspect results.
struct PipelineResult {
  std::shared_ptr<const StripMap> strip_map;
  std::shared_ptr<const ConformalMapPair> map;
  std::optional<DemandField> target;
  DemandField physical_demand;
  InducedDensityStats induced_stats;
  std::optional<double> target_distance;
  TorusLattice lattice;
  VecXc physical_sites;
  ScenarioResult loads;
  nlohmann::ordered_json sweep;  // canonical sweep table when requested
  nlohmann::ordered_json checks;
  RunManifest manifest;
};

/// Runs all phases and writes artifacts plus manifest.json. On failure the
/// manifest and a FAILED marker are written before the exception propagates.
PipelineResult run_pipeline(const Scenario& s, const RunOptions& opts = {});

/// Solve (or load) the map only and write strip_map.json.
RunManifest run_solve_map(const Scenario& s, const RunOptions& opts = {});

/// Conservation and pushforward-uniformity checks, written to checks.json.
RunManifest run_analyze(const Scenario& s, const RunOptions& opts = {});

/// Writes the requested plot data into the output directory.
std::vector<std::filesystem::path> emit_plot_data(const PipelineResult& r, PlotKind kind,
                                                  const std::filesystem::path& dir);

/// Images of the canonical grid lines under the inverse map.
std::string mapping_grid_csv(const ConformalMapPair& cm, int lines = 21, int points = 101);

struct CheckReport {
  double worst_patch_error = 0;
  int patches = 0;
  ChiSquareResult chi_square;
  nlohmann::ordered_json to_json() const;
};

/// Random disc patches plus the chi-square pushforward test.
CheckReport conservation_checks(const ConformalMapPair& cm, const DemandField& d, std::uint64_t seed,
                                int patches, int pullback_grid, Index samples);

/// Output directory: explicit option, then scenario, then $CANONET_OUT_DIR/name, then ./out/name.
std::filesystem::path resolve_output_dir(const Scenario& s, const RunOptions& opts);

}  // namespace canonet
