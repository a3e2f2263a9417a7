#include "cellgmm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cellgmm/gauss.hpp"

namespace cellgmm {

std::vector<int> align_labels(const MixtureParams& fitted, const GroundTruth& truth) {
  const int g = fitted.g();
  if (g > 8) {
    fail(ErrorCode::GTooLarge, "exhaustive label alignment supports G <= 8");
  }
  const int n = static_cast<int>(truth.clean_values.rows());

  // score(i, k) = ln pi_k + ln phi_k(x_i^clean)
  Matrix score(n, g);
  for (int k = 0; k < g; ++k) {
    SpdFactor factor(fitted.covariances[k]);
    const double log_norm =
        std::log(fitted.weights(k)) -
        0.5 * (fitted.p() * kLog2Pi + factor.log_det());
    for (int i = 0; i < n; ++i) {
      const Vector d = truth.clean_values.row(i).transpose() - fitted.means[k];
      score(i, k) = log_norm - 0.5 * factor.quad_form(d);
    }
  }

  std::vector<int> perm(g);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> best = perm;
  double best_score = -std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += score(i, perm[truth.labels[i]]);
    if (total > best_score) {
      best_score = total;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

double misclassification_rate(const std::vector<int>& assigned,
                              const std::vector<int>& truth,
                              const std::vector<int>& permutation) {
  if (assigned.size() != truth.size()) {
    fail(ErrorCode::LengthMismatch, "label vectors differ in length");
  }
  int mismatches = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (assigned[i] != permutation[truth[i]]) ++mismatches;
  }
  return static_cast<double>(mismatches) / static_cast<double>(truth.size());
}

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) {
    fail(ErrorCode::LengthMismatch, "label vectors differ in length");
  }
  const int n = static_cast<int>(a.size());
  const int ka = 1 + *std::max_element(a.begin(), a.end());
  const int kb = 1 + *std::max_element(b.begin(), b.end());
  Matrix table = Matrix::Zero(ka, kb);
  for (int i = 0; i < n; ++i) table(a[i], b[i]) += 1.0;

  auto choose2 = [](double m) { return 0.5 * m * (m - 1.0); };
  double sum_cells = 0.0;
  for (int i = 0; i < ka; ++i) {
    for (int j = 0; j < kb; ++j) sum_cells += choose2(table(i, j));
  }
  double sum_rows = 0.0;
  for (int i = 0; i < ka; ++i) sum_rows += choose2(table.row(i).sum());
  double sum_cols = 0.0;
  for (int j = 0; j < kb; ++j) sum_cols += choose2(table.col(j).sum());
  const double expected = sum_rows * sum_cols / choose2(n);
  const double maximum = 0.5 * (sum_rows + sum_cols);
  if (maximum == expected) {
    return sum_cells == expected ? 1.0 : 0.0;
  }
  return (sum_cells - expected) / (maximum - expected);
}

ParameterErrors parameter_errors(const MixtureParams& fitted, const Matrix& z,
                                 const GroundTruth& truth,
                                 const std::vector<int>& permutation) {
  const int g = fitted.g();
  const int p = fitted.p();
  const int n = static_cast<int>(truth.clean_values.rows());
  ParameterErrors err;
  err.mse_means.resize(g);
  err.kl_covs.resize(g);

  for (int k = 0; k < g; ++k) {
    const int fk = permutation[k];
    err.mse_means(k) =
        (fitted.means[fk] - truth.true_params.means[k]).squaredNorm() / p;

    SpdFactor true_factor(truth.true_params.covariances[k]);
    const Matrix ratio = true_factor.solve(fitted.covariances[fk]);
    SpdFactor fitted_factor(fitted.covariances[fk]);
    const double log_det_ratio = fitted_factor.log_det() - true_factor.log_det();
    err.kl_covs(k) = 0.5 * (ratio.trace() - p - log_det_ratio);

    const double dw = fitted.weights(fk) - truth.true_params.weights(k);
    err.mse_priors += dw * dw / g;
  }

  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < g; ++k) {
      const double target = (truth.labels[i] == k) ? 1.0 : 0.0;
      const double d = z(i, permutation[k]) - target;
      acc += d * d;
    }
  }
  err.rmse_posterior = std::sqrt(acc / (static_cast<double>(n) * g));
  return err;
}

MaskScores mask_scores(const CellMask& fitted_mask, const GroundTruth& truth) {
  if (fitted_mask.w.rows() != truth.outlier_mask.rows() ||
      fitted_mask.w.cols() != truth.outlier_mask.cols()) {
    fail(ErrorCode::ShapeMismatch, "mask and ground truth shapes differ");
  }
  long tp = 0, contaminated = 0, fp = 0, clean = 0;
  for (int i = 0; i < fitted_mask.w.rows(); ++i) {
    for (int j = 0; j < fitted_mask.w.cols(); ++j) {
      if (truth.missing_mask(i, j) != 0) continue;
      const bool flagged = fitted_mask.w(i, j) == 0;
      if (truth.outlier_mask(i, j) != 0) {
        ++contaminated;
        if (flagged) ++tp;
      } else {
        ++clean;
        if (flagged) ++fp;
      }
    }
  }
  MaskScores scores;
  if (contaminated > 0) {
    scores.tp_pct = 100.0 * static_cast<double>(tp) / contaminated;
  }
  scores.fp_pct = clean > 0 ? 100.0 * static_cast<double>(fp) / clean : 0.0;
  return scores;
}

std::pair<double, double> imputation_errors(const Matrix& imputed,
                                            const Matrix& clean,
                                            const IntMatrix* scope_mask) {
  if (imputed.rows() != clean.rows() || imputed.cols() != clean.cols()) {
    fail(ErrorCode::ShapeMismatch, "imputed and clean matrices differ in shape");
  }
  double abs_acc = 0.0;
  double sq_acc = 0.0;
  long count = 0;
  for (int i = 0; i < imputed.rows(); ++i) {
    for (int j = 0; j < imputed.cols(); ++j) {
      if (scope_mask != nullptr && (*scope_mask)(i, j) == 0) continue;
      const double d = imputed(i, j) - clean(i, j);
      abs_acc += std::abs(d);
      sq_acc += d * d;
      ++count;
    }
  }
  if (count == 0) return {0.0, 0.0};
  return {abs_acc / count, std::sqrt(sq_acc / count)};
}

IntMatrix mask_from_trimmed_rows(const std::vector<std::uint8_t>& trimmed, int p) {
  IntMatrix w = IntMatrix::Ones(static_cast<int>(trimmed.size()), p);
  for (std::size_t i = 0; i < trimmed.size(); ++i) {
    if (trimmed[i]) w.row(static_cast<int>(i)).setZero();
  }
  return w;
}

EvalReport evaluate(const FitResult& fit, const GroundTruth& truth) {
  const int n = static_cast<int>(fit.posterior.z.rows());
  std::vector<int> assigned(n);
  for (int i = 0; i < n; ++i) {
    int arg = 0;
    fit.posterior.z.row(i).maxCoeff(&arg);
    assigned[i] = arg;
  }

  EvalReport report;
  report.permutation = align_labels(fit.params, truth);
  report.mr = misclassification_rate(assigned, truth.labels, report.permutation);
  report.ari = adjusted_rand_index(assigned, truth.labels);

  const ParameterErrors err =
      parameter_errors(fit.params, fit.posterior.z, truth, report.permutation);
  report.mse_means = err.mse_means;
  report.kl_covs = err.kl_covs;
  report.mse_priors = err.mse_priors;
  report.rmse_posterior = err.rmse_posterior;

  const MaskScores scores = mask_scores(fit.mask, truth);
  report.tp_pct = scores.tp_pct;
  report.fp_pct = scores.fp_pct;

  const auto [mae, rmse] = imputation_errors(fit.imputed, truth.clean_values);
  report.mae_imputation = mae;
  report.rmse_imputation = rmse;
  return report;
}

}  // namespace cellgmm
