#pragma once

// Load coupling: each cell's bandwidth share depends on the SINR its users
// see, which depends on how busy the other cells are. Solved per cell on a
// sampled partition, and in closed scalar form for the symmetric torus.

#include "canonet/canonical.hpp"
#include "canonet/geometry.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace canonet {

struct CellLoad {
  double load = 0;
  bool clamped = false;
};

/// alpha_l = V_l * b_l / B_sys, clamped to 1 (flagged only when above 1).
CellLoad cell_load(double cell_volume, double mean_bandwidth, double b_sys);

struct LoadVector {
  VecX load;
  std::vector<bool> clamped;
  std::vector<bool> boundary;
  std::optional<double> uniform;  // alpha_c for the periodic canonical case
  int iterations = 0;
  /// max |T(alpha) - alpha| at the returned loads.
  double residual = 0;

  Index size() const { return load.size(); }
  double mean() const;
  double mean_where(bool boundary_cells) const;
};

/// One fixed-point problem: sites, the sampled partition, and the demand
/// mass of every partition sample (same grid, sums to one).
struct LoadProblem {
  VecXc sites;
  CellPartition partition;
  VecX masses;
  double volume = 0;  // V = E{mu} / E{lambda}
  LinkModel link;
  Metric metric = Metric::euclidean;
  double period_w = 0;  // torus periods for Metric::periodic
  double period_h = 0;
  VecX noise_multiplier;       // per cell; empty means all ones
  std::vector<bool> boundary;  // copied into the result
  /// Split samples that straddle a cell edge among the cells they overlap
  /// (8x8 sub-samples). Off, each sample counts wholly for its label.
  bool split_edge_samples = true;
};

/// Raised when the iteration cap is hit; carries the last two iterates.
class LoadConvergenceError : public ConvergenceError {
 public:
  LoadConvergenceError(const std::string& what, VecX last, VecX previous, double change)
      : ConvergenceError(what, std::move(last), change), previous_(std::move(previous)) {}
  const VecX& previous_iterate() const { return previous_; }

 private:
  VecX previous_;
};

/// Jacobi iteration alpha <- min(1, V_l b_l(alpha) / B_sys) from alpha = 1.
LoadVector load_fixed_point(const LoadProblem& problem, double tol = 1e-9, int max_iter = 5000);

/// The network cannot carry the demand at this L: even at full load the
/// required share exceeds the bandwidth.
class InfeasibleDemandError : public DomainError {
 public:
  InfeasibleDemandError(const std::string& what, double load_at_full)
      : DomainError(what), load_at_full_(load_at_full) {}
  double load_at_full() const { return load_at_full_; }

 private:
  double load_at_full_;
};

/// Uniform load of the symmetric periodic lattice, by bisection on the
/// scalar self-consistency equation integrated over one fundamental cell.
double canonical_uniform_load(const TorusLattice& lat, double volume, const LinkModel& lm,
                              double tol = 1e-12, int grid_n = 250);

/// Right-hand side of the scalar equation at a trial load (exposed for tests).
double canonical_load_map(const TorusLattice& lat, double volume, const LinkModel& lm, double alpha,
                          int grid_n = 250);

class DimensioningError : public DomainError {
 public:
  DimensioningError(const std::string& what, Index cap, double achieved)
      : DomainError(what), cap_(cap), achieved_(achieved) {}
  Index cap() const { return cap_; }
  double achieved_load() const { return achieved_; }

 private:
  Index cap_;
  double achieved_;
};

struct DimensioningResult {
  Index L = 0;
  double load = 0;
  int lw = 0;
  int lh = 0;
};

/// Smallest feasible L whose uniform load does not exceed the target.
DimensioningResult dimension_network(double target, const RectangleDomain& rect, double volume,
                                     const LinkModel& lm, Tiling tiling, int grid_n = 250,
                                     Index max_l = 2000);

double pearson_correlation(const VecX& a, const VecX& b);

struct ScenarioResult {
  LoadVector canonical_periodic;
  LoadVector canonical_nonperiodic;
  LoadVector physical;
  double alpha_c = 0;
  double correlation = 0;
  double module_match = 0;
  /// alpha_c >= max of the non-periodic canonical loads.
  bool worst_case_holds = false;
};

ScenarioResult compare_domains(LoadVector periodic, LoadVector nonperiodic, LoadVector physical,
                               double alpha_c, double module_match);

/// cell,load,clamped,boundary
std::string load_vector_csv(const LoadVector& v);
/// cell,periodic,canonical,physical
std::string load_pattern_csv(const ScenarioResult& r);
nlohmann::ordered_json scenario_result_json(const ScenarioResult& r);

}  // namespace canonet
