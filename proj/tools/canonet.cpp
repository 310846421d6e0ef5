// canonet: plan a base-station lattice for a polygonal service area.
//
//   canonet solve-map <scenario.json> [--out DIR]
//   canonet plan      <scenario.json> [--out DIR] [--seed N] [--grid N] [--emit kinds] [--map FILE]
//   canonet analyze   <scenario.json> [--out DIR] [--seed N] [--grid N] [--patches N] [--map FILE]
//   canonet emit      <scenario.json> --kind kinds [--out DIR] [--grid N] [--map FILE]
//
// Exit codes: 0 success, 2 invalid input, 3 numerical failure.

#include "canonet/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <sstream>

using namespace canonet;

namespace {

constexpr int kExitInvalid = 2;
constexpr int kExitNumerical = 3;

std::set<PlotKind> parse_kinds(const std::string& list) {
  std::set<PlotKind> kinds;
  if (list == "none") return kinds;
  if (list == "all") return all_plot_kinds();
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) kinds.insert(parse_plot_kind(item));
  return kinds;
}

void print_summary(const RunManifest& m, const std::filesystem::path& dir) {
  std::printf("scenario  %s (%s)\n", m.scenario_name.c_str(), m.scenario_hash.substr(0, 12).c_str());
  if (m.module) std::printf("module    %.10g\n", *m.module);
  if (m.L) std::printf("L         %lld\n", static_cast<long long>(*m.L));
  if (!m.placement_note.empty()) std::printf("note      %s\n", m.placement_note.c_str());
  if (m.alpha_c) std::printf("alpha_c   %.10g\n", *m.alpha_c);
  if (m.correlation) std::printf("corr      %.6f\n", *m.correlation);
  for (const PhaseRecord& p : m.phases) std::printf("phase     %-10s %8.3f s\n", p.name.c_str(), p.seconds);
  std::printf("output    %s\n", dir.string().c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conformal canonical-domain cellular network planner"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  std::string scenario_path, out, map_path, emit_list = "all", kind_list;
  std::optional<std::uint64_t> seed;
  std::optional<int> grid;
  int plan_patches = 0, analyze_patches = 20;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("scenario", scenario_path, "Scenario JSON document")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, "Output directory (default $CANONET_OUT_DIR/<name> or out/<name>)");
    sub->add_option("--map", map_path, "Cached strip map JSON to reuse")->check(CLI::ExistingFile);
  };
  auto add_grid = [&](CLI::App* sub) {
    sub->add_option("--grid", grid, "Demand and partition grid resolution")->check(CLI::Range(10, 4000));
  };

  CLI::App* solve = app.add_subcommand("solve-map", "Solve the strip map parameters and write strip_map.json");
  add_common(solve);

  CLI::App* plan = app.add_subcommand("plan", "Run all four phases");
  add_common(plan);
  add_grid(plan);
  plan->add_option("--seed", seed, "Override the seed derived from the scenario hash");
  plan->add_option("--emit", emit_list, "Plot data: all, none, or a list of mapping-grid,load-pattern,cdf,sites");
  plan->add_option("--patches", plan_patches, "Conservation-check patches (0 skips the checks)");

  CLI::App* analyze = app.add_subcommand("analyze", "Demand conservation and pushforward checks");
  add_common(analyze);
  add_grid(analyze);
  analyze->add_option("--seed", seed, "Override the seed derived from the scenario hash");
  analyze->add_option("--patches", analyze_patches, "Number of random patches");

  CLI::App* emit = app.add_subcommand("emit", "Write plot data only");
  add_common(emit);
  add_grid(emit);
  emit->add_option("--kind", kind_list, "mapping-grid, load-pattern, cdf, sites (comma separated)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInvalid;
  }

  try {
    const Scenario s = load_scenario(scenario_path);
    RunOptions opts;
    opts.output = out;
    opts.seed = seed;
    opts.grid = grid;
    opts.map_json = map_path;
    const std::filesystem::path dir = resolve_output_dir(s, opts);

    if (*solve) {
      print_summary(run_solve_map(s, opts), dir);
    } else if (*plan) {
      opts.emit = parse_kinds(emit_list);
      opts.check_patches = plan_patches;
      print_summary(run_pipeline(s, opts).manifest, dir);
    } else if (*analyze) {
      opts.check_patches = analyze_patches;
      print_summary(run_analyze(s, opts), dir);
    } else if (*emit) {
      opts.emit = parse_kinds(kind_list);
      print_summary(run_pipeline(s, opts).manifest, dir);
    }
    return 0;
  } catch (const ValidationError& e) {
    std::cerr << "canonet: invalid input: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const DomainError& e) {
    std::cerr << "canonet: invalid input: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const ConvergenceError& e) {
    std::cerr << "canonet: numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const SingularityError& e) {
    std::cerr << "canonet: numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "canonet: " << e.what() << '\n';
    return 1;
  }
}
