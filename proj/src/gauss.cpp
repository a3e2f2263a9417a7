#include "cellgmm/gauss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cellgmm {

double log_sum_exp(const double* v, int n) {
  double m = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) m = std::max(m, v[i]);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += std::exp(v[i] - m);
  return m + std::log(s);
}

double log_sum_exp(const std::vector<double>& v) {
  return log_sum_exp(v.data(), static_cast<int>(v.size()));
}

Matrix submatrix(const Matrix& s, const std::vector<int>& rows,
                 const std::vector<int>& cols) {
  Matrix out(rows.size(), cols.size());
  for (std::size_t a = 0; a < rows.size(); ++a) {
    for (std::size_t b = 0; b < cols.size(); ++b) {
      out(a, b) = s(rows[a], cols[b]);
    }
  }
  return out;
}

Vector subvector(const Vector& v, const std::vector<int>& idx) {
  Vector out(idx.size());
  for (std::size_t a = 0; a < idx.size(); ++a) out(a) = v(idx[a]);
  return out;
}

SpdFactor::SpdFactor(const Matrix& s) {
  llt_.compute(s);
  if (llt_.info() != Eigen::Success) {
    fail(ErrorCode::SingularSubmatrix,
         "restricted covariance block failed Cholesky factorization");
  }
  const auto& l = llt_.matrixLLT();
  double min_diag = std::numeric_limits<double>::infinity();
  double max_diag = 0.0;
  log_det_ = 0.0;
  for (int i = 0; i < l.rows(); ++i) {
    const double d = l(i, i);
    min_diag = std::min(min_diag, d);
    max_diag = std::max(max_diag, d);
    log_det_ += 2.0 * std::log(d);
  }
  // (max L_ii / min L_ii)^2 lower-bounds the eigenvalue ratio of s.
  if (l.rows() > 0 &&
      (min_diag <= 0.0 || (max_diag / min_diag) * (max_diag / min_diag) > 1e12)) {
    fail(ErrorCode::SingularSubmatrix,
         "restricted covariance block exceeds conditioning bound 1e12");
  }
}

double log_density_masked(const Vector& x, const IntVector& mask,
                          const Vector& mu, const Matrix& sigma) {
  std::vector<int> reliable;
  reliable.reserve(mask.size());
  for (int j = 0; j < mask.size(); ++j) {
    if (mask(j) != 0) reliable.push_back(j);
  }
  if (reliable.empty()) return 0.0;
  const int r = static_cast<int>(reliable.size());
  SpdFactor factor(submatrix(sigma, reliable, reliable));
  const Vector d = subvector(x, reliable) - subvector(mu, reliable);
  return -0.5 * (r * kLog2Pi + factor.log_det() + factor.quad_form(d));
}

ConditionalMoments conditional_moments(const Vector& x,
                                       const std::vector<int>& reliable,
                                       const std::vector<int>& target,
                                       const Vector& mu, const Matrix& sigma) {
  ConditionalMoments out;
  if (target.empty()) {
    out.cond_mean = Vector(0);
    out.cond_cov = Matrix(0, 0);
    return out;
  }
  if (reliable.empty()) {
    out.cond_mean = subvector(mu, target);
    out.cond_cov = submatrix(sigma, target, target);
    return out;
  }
  SpdFactor factor(submatrix(sigma, reliable, reliable));
  const Matrix cross = submatrix(sigma, target, reliable);  // t x r
  const Vector d = subvector(x, reliable) - subvector(mu, reliable);
  const Matrix solved = factor.solve(cross.transpose());    // r x t
  out.cond_mean = subvector(mu, target) + solved.transpose() * d;
  out.cond_cov = submatrix(sigma, target, target) - cross * solved;
  // Symmetrize away factorization round-off.
  out.cond_cov = 0.5 * (out.cond_cov + out.cond_cov.transpose()).eval();
  return out;
}

double mahalanobis(const Vector& x, const Vector& mu, const Matrix& sigma) {
  SpdFactor factor(sigma);
  return std::sqrt(factor.quad_form(x - mu));
}

}  // namespace cellgmm
