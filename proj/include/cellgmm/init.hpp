#pragma once

#include "cellgmm/rng.hpp"
#include "cellgmm/types.hpp"

namespace cellgmm {

// Tuning knobs of the two-stage initialization. The trimming levels derive
// from one assumed contamination level; 0.03 is a conservative default when
// the true level is unknown.
struct InitConfig {
  double alpha_true = 0.03;
  int n_rep = 40;
  int n_start = 10;
  int n_iter = 10;
  int tclust_starts = 16;
  int tclust_iters = 20;

  double alpha_tclust() const { return 2.0 * alpha_true; }
  double alpha1() const { return alpha_true; }
  double alpha2() const { return alpha_true; }
  double alpha_a1() const { return alpha_true; }
  double alpha_a2() const { return 2.0 * alpha_true; }
  int q_vars(int p) const { return p / 2 + 1; }
};

struct TclustFit {
  MixtureParams params;
  std::vector<std::uint8_t> trimmed;  // 1 = excluded from the estimates
  std::vector<int> assignment;        // hard labels, -1 for trimmed rows
  double objective;                   // trimmed classification log-likelihood
};

// One location/scatter estimate from a variable-subset run, embedded in R^p
// with availability flags.
struct StoredCenter {
  Vector value;
  std::vector<std::uint8_t> present;
  Matrix cov;               // block over subset coordinates
  std::vector<int> subset;  // ascending coordinate indices
};

struct CenterKmeans {
  std::vector<Vector> centers;
  std::vector<std::vector<std::uint8_t>> present;
  std::vector<int> assignment;  // per stored center, -1 when trimmed
  double objective;
};

// Trimmed k-means of stored centers; distances average squared differences
// over shared available coordinates.
CenterKmeans trimmed_center_kmeans(const std::vector<StoredCenter>& centers,
                                   int g, int n_rep, const InitConfig& cfg,
                                   Rng& rng);

// Classification EM with casewise trimming on a fully observed matrix:
// hard assignments, the ceil(alpha*n) least-likely rows trimmed, and the
// eigenvalue-ratio constraint applied to every covariance update.
TclustFit mini_tclust(const Matrix& x, int g, double alpha, double c, int starts,
                      int iters, Rng& rng);

// Reliability mask from univariate and pairwise trimmed clustering; missing
// cells are always 0 and every column keeps at least h reliable cells.
CellMask init_mask(const DataSet& data, int g, const InitConfig& cfg, int h,
                   Rng& rng);

// Parameters from trimmed clustering on random variable subsets followed by
// a trimmed k-means of the collected centers.
MixtureParams init_params(const DataSet& data, const CellMask& mask0, int g,
                          const InitConfig& cfg, double c, Rng& rng);

Initialization make_initialization(const DataSet& data, int g,
                                   const InitConfig& cfg, double c, int h,
                                   Rng& rng);

}  // namespace cellgmm
