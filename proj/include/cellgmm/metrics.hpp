#pragma once

#include <optional>
#include <vector>

#include "cellgmm/simlab.hpp"
#include "cellgmm/types.hpp"

namespace cellgmm {

struct ParameterErrors {
  Vector mse_means;  // per true component
  Vector kl_covs;    // covariance-only Gaussian KL per true component
  double mse_priors = 0.0;
  double rmse_posterior = 0.0;
};

struct MaskScores {
  std::optional<double> tp_pct;  // absent when nothing was contaminated
  double fp_pct = 0.0;
};

struct EvalReport {
  double mr = 0.0;
  double ari = 0.0;
  double rmse_posterior = 0.0;
  double mse_priors = 0.0;
  Vector mse_means;
  Vector kl_covs;
  std::optional<double> tp_pct;
  double fp_pct = 0.0;
  double mae_imputation = 0.0;
  double rmse_imputation = 0.0;
  std::vector<int> permutation;  // fitted component of each true component
};

// Permutation maximizing the complete-data log-likelihood of the fitted
// parameters against the clean sample and true labels; exhaustive over G!.
std::vector<int> align_labels(const MixtureParams& fitted, const GroundTruth& truth);

double misclassification_rate(const std::vector<int>& assigned,
                              const std::vector<int>& truth,
                              const std::vector<int>& permutation);

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b);

ParameterErrors parameter_errors(const MixtureParams& fitted, const Matrix& z,
                                 const GroundTruth& truth,
                                 const std::vector<int>& permutation);

// Flagging quality over observed cells; missing cells leave both counts.
MaskScores mask_scores(const CellMask& fitted_mask, const GroundTruth& truth);

// MAE and RMSE of (imputed - clean) over the scoped cells (all cells by
// default, matching how imputation quality is reported).
std::pair<double, double> imputation_errors(const Matrix& imputed,
                                            const Matrix& clean,
                                            const IntMatrix* scope_mask = nullptr);

// W built from a rowwise trimming indicator: flagged rows become all-zero.
IntMatrix mask_from_trimmed_rows(const std::vector<std::uint8_t>& trimmed, int p);

EvalReport evaluate(const FitResult& fit, const GroundTruth& truth);

}  // namespace cellgmm
