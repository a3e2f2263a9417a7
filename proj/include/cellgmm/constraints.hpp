#pragma once

#include <vector>

#include "cellgmm/types.hpp"

namespace cellgmm {

// Spectral decomposition of one component covariance together with the
// expected component size used to weight the truncation deviance.
struct EigenSystem {
  Vector eigenvalues;   // descending
  Matrix eigenvectors;  // orthonormal columns, matching order
  double weight = 1.0;  // n_g = sum_i z_ig
};

// Clips every eigenvalue into [m, c*m] for the threshold m minimizing the
// weighted deviance sum_g (n_g/n) sum_j [ln l*_jg + l_jg / l*_jg]. Inputs
// already satisfying the ratio bound are returned unchanged.
std::vector<Vector> truncate_eigenvalues(const std::vector<EigenSystem>& systems,
                                         double c);

// Recomposes each covariance from its truncated spectrum; weights and means
// are untouched. Posterior column sums provide the truncation weights.
MixtureParams apply_constraint(const MixtureParams& params,
                               const Posterior& posterior, double c);
MixtureParams apply_constraint(const MixtureParams& params,
                               const std::vector<double>& weights, double c);

}  // namespace cellgmm
