#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace cellgmm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using IntMatrix = Eigen::ArrayXXi;
using IntVector = Eigen::ArrayXi;

enum class ErrorCode {
  ColumnTooSparse,
  DegenerateDimensions,
  NonFiniteValue,
  SingularSubmatrix,
  AllWeightsZero,
  EmptyComponent,
  TooFewRows,
  TooFewCleanRows,
  RejectionBudgetExceeded,
  NotEnoughCells,
  UnknownScenario,
  GTooLarge,
  LengthMismatch,
  ShapeMismatch,
  InvalidArgument,
  IoError,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }
  const char* code_name() const noexcept { return error_code_name(code_); }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& msg) {
  throw Error(code, msg);
}

// n x p sample with a per-cell observed indicator. Values at cells with
// observed == 0 are unspecified and must never be read downstream.
struct DataSet {
  Matrix values;       // n x p
  IntMatrix observed;  // n x p, 1 = present

  int n() const { return static_cast<int>(values.rows()); }
  int p() const { return static_cast<int>(values.cols()); }

  static DataSet fully_observed(Matrix values);
  // NaN entries become missing cells (value zeroed, observed = 0).
  static DataSet from_values_with_nan(Matrix values);
};

// Reliability pattern W: w_ij = 1 means cell (i,j) enters the estimation,
// 0 means flagged or missing.
struct CellMask {
  IntMatrix w;

  int n() const { return static_cast<int>(w.rows()); }
  int p() const { return static_cast<int>(w.cols()); }

  static CellMask all_reliable(int n, int p);
};

struct MixtureParams {
  Vector weights;                   // length G, positive, sums to 1
  std::vector<Vector> means;        // G vectors in R^p
  std::vector<Matrix> covariances;  // G symmetric positive definite p x p

  int g() const { return static_cast<int>(weights.size()); }
  int p() const { return means.empty() ? 0 : static_cast<int>(means[0].size()); }
};

struct Posterior {
  Matrix z;  // n x G, rows sum to 1
};

enum class PenaltyMode { none, automatic };

struct FitConfig {
  int g = 1;
  double h_frac = 0.75;
  double c = 50.0;  // eigenvalue-ratio bound
  PenaltyMode penalty_mode = PenaltyMode::automatic;
  double alpha_quantile = 0.01;  // alpha of the penalty cutoff
  int max_iter = 500;
  double epsilon = 1e-6;  // Aitken tolerance
  std::uint64_t seed = 0;
  int n_restarts = 5;
};

struct FitResult {
  MixtureParams params;
  CellMask mask;
  Posterior posterior;
  Matrix imputed;    // original values at reliable cells, conditional means elsewhere
  Matrix residuals;  // standardized cellwise residuals, NaN at missing cells
  std::vector<double> objective_trace;
  bool converged = false;
  int iterations = 0;
};

struct Initialization {
  MixtureParams params;
  CellMask mask;
};

struct IndexSplit {
  std::vector<int> reliable;
  std::vector<int> unreliable;
};

// Partitions {0..p-1} by the binary mask row; both lists sorted ascending.
IndexSplit subset_indices(const IntVector& mask_row);

// Checks the DataSet/FitConfig invariants and returns the normalized
// per-column reliability floor h = ceil(h_frac * n).
int validate_dataset(const DataSet& data, const FitConfig& cfg);

int required_h(double h_frac, int n);

}  // namespace cellgmm
