#pragma once

#include <Eigen/Cholesky>

#include <vector>

#include "cellgmm/types.hpp"

namespace cellgmm {

inline constexpr double kLog2Pi = 1.8378770664093454836;

// Expectation and variance of a target block of a Gaussian vector
// conditional on an observed block. Both fields are empty when the target
// set is empty.
struct ConditionalMoments {
  Vector cond_mean;
  Matrix cond_cov;
};

double log_sum_exp(const double* v, int n);
double log_sum_exp(const std::vector<double>& v);

Matrix submatrix(const Matrix& s, const std::vector<int>& rows,
                 const std::vector<int>& cols);
Vector subvector(const Vector& v, const std::vector<int>& idx);

// Cholesky factor of an SPD block. Throws SingularSubmatrix when the block
// fails to factor or its conditioning exceeds 1e12.
class SpdFactor {
 public:
  explicit SpdFactor(const Matrix& s);

  int dim() const { return static_cast<int>(llt_.matrixLLT().rows()); }
  double log_det() const { return log_det_; }
  template <typename Derived>
  auto solve(const Eigen::MatrixBase<Derived>& b) const {
    return llt_.solve(b).eval();
  }
  // d' S^{-1} d via one triangular solve.
  double quad_form(const Vector& d) const {
    return llt_.matrixL().solve(d).squaredNorm();
  }

 private:
  Eigen::LLT<Matrix> llt_;
  double log_det_ = 0.0;
};

// ln phi over the sub-vector selected by the mask; 0 for an empty mask.
double log_density_masked(const Vector& x, const IntVector& mask,
                          const Vector& mu, const Matrix& sigma);

// Conditional mean and covariance of the target coordinates given the
// reliable coordinates of x. Empty reliable set yields the marginal moments.
ConditionalMoments conditional_moments(const Vector& x,
                                       const std::vector<int>& reliable,
                                       const std::vector<int>& target,
                                       const Vector& mu, const Matrix& sigma);

// sqrt((x - mu)' sigma^{-1} (x - mu))
double mahalanobis(const Vector& x, const Vector& mu, const Matrix& sigma);

}  // namespace cellgmm
