#pragma once

#include <optional>
#include <vector>

#include "cellgmm/init.hpp"
#include "cellgmm/types.hpp"

namespace cellgmm {

// Per-cell flagging costs of the penalized objective; the zero matrix in
// unpenalized mode.
struct PenaltyMatrix {
  Matrix q;

  static PenaltyMatrix zero(int n, int p) { return PenaltyMatrix{Matrix::Zero(n, p)}; }
  bool is_zero() const { return q.size() == 0 || q.cwiseAbs().maxCoeff() == 0.0; }
};

struct EMState {
  MixtureParams params;
  CellMask mask;
  Posterior posterior;
  double objective = 0.0;
  int iteration = 0;
};

// E-step expectations: responsibilities, per-component completed rows, and
// the conditional covariance block of each row's unreliable coordinates.
struct EStepResult {
  Matrix z;                                   // n x G
  std::vector<std::vector<int>> unreliable;   // per row, sorted
  std::vector<Matrix> completed;              // per g: n x p
  std::vector<std::vector<Matrix>> cond_cov;  // [g][i] over unreliable[i]
  double loglik = 0.0;                        // objective at the input (params, mask)
};

// ln sum_g pi_g phi(x over the mask); 0 for an all-zero mask.
double row_contribution(const Vector& x, const IntVector& w,
                        const MixtureParams& params);

// Objective gain of treating cell j as reliable, all other entries of
// w_tilde fixed.
double delta_unpenalized(const Vector& x, const IntVector& w_tilde, int j,
                         const MixtureParams& params);

// Penalized counterpart driven by the per-component conditional moments of
// cell j and the responsibilities of row i.
double delta_penalized(const Vector& x, const IntVector& w_tilde, int j,
                       const MixtureParams& params, const Vector& z_row,
                       double q_ij);

// New column j of the mask. Unpenalized: exactly h ones at the h largest
// deltas. Penalized: all nonnegative deltas when more than h of them exist,
// otherwise the h largest. Ties go to the smaller row index; missing cells
// stay 0. deltas is only read at observed positions.
IntVector update_mask_column(const Vector& deltas, const IntVector& observed_col,
                             int h, bool penalized);

// One full column sweep in ascending column order, each column conditioned
// on the intermediate mask.
CellMask c_step(const DataSet& data, const CellMask& mask,
                const MixtureParams& params, const Matrix& z,
                const PenaltyMatrix& penalty, int h, bool penalized);

EStepResult e_step(const DataSet& data, const CellMask& mask,
                   const MixtureParams& params);

MixtureParams m_step(const DataSet& data, const CellMask& mask,
                     const EStepResult& estep, double c);

// q_ij = 0.5 [ sum_g z_ig ln(1/(Sigma_g^{-1})_jj) + chi2_{1,1-alpha} + ln 2pi ],
// from the estimates at convergence of the unpenalized phase.
PenaltyMatrix compute_penalty(const DataSet& data, const CellMask& mask,
                              const MixtureParams& params, const Matrix& z,
                              double alpha);

// Aitken acceleration stop rule on the last three objective values.
bool aitken_converged(double l_prev, double l_cur, double l_next, double epsilon);

// Observed-data objective at (params, mask).
double objective(const DataSet& data, const CellMask& mask,
                 const MixtureParams& params);
double penalized_objective(const DataSet& data, const CellMask& mask,
                           const MixtureParams& params,
                           const PenaltyMatrix& penalty);

// Standardized cellwise residual of every observed cell under the row's MAP
// component, conditioning on the row's other reliable cells; NaN at missing
// cells.
Matrix standardized_residuals(const DataSet& data, const CellMask& mask,
                              const MixtureParams& params, const Matrix& z);

// Original values at reliable cells, MAP-component conditional means at
// flagged and missing cells.
Matrix imputed_matrix(const DataSet& data, const CellMask& mask,
                      const EStepResult& estep);

struct FitOutputs {
  FitResult unpenalized;
  std::optional<FitResult> penalized;
};

// Two-phase driver: unpenalized EM to convergence from every restart's
// initialization, then (in automatic mode) the penalized EM re-started from
// the winning initialization with the penalty derived at the unpenalized
// optimum.
FitOutputs fit_all(const DataSet& data, const FitConfig& cfg,
                   const InitConfig& init_cfg,
                   const Initialization* first_init = nullptr);

// Final-phase result of fit_all with `init` as the first restart.
FitResult fit(const DataSet& data, const FitConfig& cfg,
              const Initialization& init, const InitConfig& init_cfg = {});

}  // namespace cellgmm
