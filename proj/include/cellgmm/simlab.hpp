#pragma once

#include <string>
#include <vector>

#include "cellgmm/rng.hpp"
#include "cellgmm/types.hpp"

namespace cellgmm {

enum class CovFamily { ar1, ar1_rotated };
enum class Separation { well_separated, close };
enum class ContaminationKind { none, uniform, extreme, structural };

struct ContaminationSpec {
  ContaminationKind kind = ContaminationKind::none;
  double lo = -10.0;
  double hi = 10.0;
  double gamma = 5.0;  // structural distance multiplier
};

// Generative description of one synthetic experiment.
struct ScenarioSpec {
  int id = 0;  // 1..6 canonical, 0 custom
  int n = 200;
  int p = 5;
  int g = 2;
  Vector weights;
  CovFamily cov_family = CovFamily::ar1;
  double rho = 0.9;
  Separation separation = Separation::well_separated;
  ContaminationSpec contamination;
  double contamination_rate = 0.0;
  double missing_rate = 0.0;
};

struct GroundTruth {
  Matrix clean_values;
  std::vector<int> labels;  // 0-based component index per row
  MixtureParams true_params;
  IntMatrix outlier_mask;  // 1 = contaminated cell
  IntMatrix missing_mask;  // 1 = removed cell, disjoint from outlier_mask
};

struct OverlapEstimate {
  Matrix directed;   // omega_{g -> g'}
  double omega_max;  // max over unordered pairs of the two directed rates
};

// Toeplitz correlation matrix sigma_ij = rho^|i-j|.
Matrix ar1_covariance(int p, double rho);

// First mean at the origin, the rest uniform per regime; the well-separated
// regime redraws until all pairwise distances reach 5.
std::vector<Vector> generate_means(int g, int p, Separation separation, Rng& rng);

// Monte Carlo misclassification rates between components.
OverlapEstimate estimate_overlap(const MixtureParams& params, int n_mc, Rng& rng);

ScenarioSpec build_scenario(int id);

// Clean sample with labels; means are redrawn until the overlap thresholds
// of the separation regime hold (best effort within a 200-draw budget).
GroundTruth generate_truth(const ScenarioSpec& spec, Rng& rng);

// Replaces ceil(rate*n*p) distinct cells by Uniform(lo, hi) draws; with
// enforce_ellipsoid every contaminated row is redrawn until it leaves the
// 99th percentile ellipsoid of every component. Updates truth.outlier_mask.
DataSet contaminate_random(GroundTruth& truth, double rate, double lo, double hi,
                           bool enforce_ellipsoid, Rng& rng);

// Structural contamination along the top eigenvector of the first
// component's restricted covariance, at Mahalanobis distance gamma*sqrt(k).
DataSet contaminate_structural(GroundTruth& truth, double rate_per_column,
                               double gamma, Rng& rng);

// Removes cells completely at random among uncontaminated cells.
DataSet remove_missing(const DataSet& data, GroundTruth& truth,
                       double missing_rate, Rng& rng);

struct SimulatedSample {
  GroundTruth truth;
  DataSet data;
};

SimulatedSample simulate(const ScenarioSpec& spec, Rng& rng);

const char* contamination_kind_name(ContaminationKind kind);

}  // namespace cellgmm
