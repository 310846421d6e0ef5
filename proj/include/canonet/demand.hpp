#pragma once

// Spatial service demand: probability densities sampled on cell-centred grids,
// the density a conformal map induces on the polygon, and the checks that the
// map carries it to the uniform canonical density.

#include "canonet/geometry.hpp"
#include "canonet/scmap.hpp"

#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace canonet {

struct TrafficParams {
  double mean_session = 120;       // E{mu}, s
  double mean_interarrival = 0.05; // E{lambda}, s
  double r_min = 100e3;            // bit/s
  double b_sys = 5e6;              // Hz

  /// Average number of users V = E{mu} / E{lambda}.
  double volume() const { return mean_session / mean_interarrival; }
  void validate() const;
};

/// Density (probability per unit area) on a sample grid. weight(k) is the area
/// sample k stands for: the grid cell area inside the support, zero outside.
struct DemandField {
  SampleGrid grid;
  VecX density;
  VecX weight;
  TrafficParams traffic;

  double volume() const { return traffic.volume(); }
  /// Per-sample probability mass density * weight.
  VecX masses() const { return density.cwiseProduct(weight); }
  /// Compensated grid integral; 1 for a valid field.
  double integral() const;
  bool in_support(Index k) const { return weight(k) > 0; }
  /// Rescale so the integral is one; throws DomainError on an empty field.
  void normalize();
};

/// Uniform density 1/|R| over a rectangle with the same volume as the
/// physical field.
struct CanonicalDemand {
  RectangleDomain rect;
  TrafficParams traffic;

  double density() const { return 1 / rect.area(); }
  double volume() const { return traffic.volume(); }
  DemandField sample(int grid_n) const;
};

enum class DensityForm {
  jacobian,   // K / |(F^{-1})'(F(z))|^2, the measure-preserving pushforward
  divergence  // K / (2 Re (F^{-1})'), diagnostic; negative values clamped
};

struct InducedDensityStats {
  /// Integral of 1/(|R| |(F^{-1})'|^2) before normalization (1 up to grid error).
  double raw_integral = 0;
  Index clamped_negative = 0;
  Index samples = 0;
  /// Samples whose forward map failed; filled from neighbouring samples.
  Index filled = 0;
};

/// Density induced on the polygon by the uniform canonical density, sampled on
/// an n x n grid over the polygon's bounding box.
DemandField induced_density(const ConformalMapPair& cm, int grid_n,
                            DensityForm form = DensityForm::jacobian,
                            const TrafficParams& traffic = {},
                            InducedDensityStats* stats = nullptr);

/// Area of each grid cell that lies inside the polygon (8 x 8 subsampling on
/// cells the boundary crosses) and, per cell, an interior point at which to
/// evaluate densities.
struct SupportSampling {
  VecX weight;
  VecXc eval_point;
};
SupportSampling support_sampling(const Polygon& p, const SampleGrid& grid);

/// Uniform density over the polygon.
DemandField uniform_density(const Polygon& p, int grid_n, const TrafficParams& traffic = {});

/// Named reconstructions: "uniform", "hotspot_a1", "hotspot_a2" (Gaussian
/// mixtures in bounding-box coordinates). Throws ValidationError otherwise.
DemandField demand_preset(const std::string& name, const Polygon& p, int grid_n,
                          const TrafficParams& traffic = {});
const std::vector<std::string>& demand_preset_names();

/// Nearest-sample resampling onto another grid restricted to a polygon, then
/// renormalized.
DemandField resample(const DemandField& src, const Polygon& p, const SampleGrid& grid);

/// 1/2 sum |p_k - q_k| over sample masses; grids must coincide.
double total_variation(const DemandField& a, const DemandField& b);

struct CdfTable {
  VecX probability;  // per-element probability, ascending
  VecX cdf;          // fraction of elements at or below, ending at 1
};

/// CDF of per-element probability over the support, reduced to `bins` rows.
CdfTable demand_cdf(const DemandField& d, int bins);

/// Region used by the conservation check: a disc or a polygon.
class Patch {
 public:
  static Patch disc(Complex centre, double radius);
  static Patch polygon(Polygon p);

  bool contains(Complex z) const;
  /// Distance from z to the patch boundary.
  double boundary_distance(Complex z) const;
  bool empty() const { return is_disc_ && radius_ == 0; }
  /// Throws DomainError unless the patch lies inside `domain`.
  void require_inside(const Polygon& domain) const;

 private:
  Patch() = default;
  bool is_disc_ = true;
  Complex centre_{};
  double radius_ = 0;
  std::vector<Polygon> poly_;
};

/// F^{-1} images of an n x n cell-centred canonical grid; each image carries
/// probability 1 / n^2 under the uniform canonical density.
struct CanonicalPullback {
  SampleGrid grid;
  VecXc images;

  static CanonicalPullback build(const ConformalMapPair& cm, int grid_n);
};

/// (integral of d over S, integral of the canonical density over F(S)).
std::pair<double, double> patch_conservation_check(const CanonicalPullback& pullback,
                                                   const DemandField& d, const Polygon& domain,
                                                   const Patch& patch);
std::pair<double, double> patch_conservation_check(const ConformalMapPair& cm, const DemandField& d,
                                                   const Patch& patch, int grid_n);

/// Draw physical points from the piecewise-constant field (uniform within each
/// grid cell, rejecting points outside the polygon).
std::vector<Complex> sample_demand(const DemandField& d, const Polygon& p, Index count,
                                   std::mt19937_64& rng);

struct ChiSquareResult {
  double statistic = 0;
  int dof = 0;
  double p_value = 0;
};

/// Pearson chi-square of counts against equal expected frequencies.
ChiSquareResult chi_square_uniform(const VecX& counts);

/// CSV grid (x, y, density) plus a JSON header with V, E{mu}, E{lambda}.
void export_demand(const DemandField& d, const std::filesystem::path& csv_path,
                   const std::filesystem::path& header_path);
std::string demand_csv(const DemandField& d);
/// Reads a CSV written by export_demand (or any regular cell-centred grid).
DemandField import_demand(const std::filesystem::path& csv_path,
                          const std::filesystem::path& header_path);
std::string cdf_csv(const CdfTable& t);

}  // namespace canonet
