#pragma once

#include <vector>

namespace cellgmm {

// Quantile of the chi-squared distribution with `dof` degrees of freedom.
double chi_squared_quantile(double dof, double prob);

// Sample quantile with linear interpolation (the convention of most
// statistical software); v is copied and may contain any finite values.
double quantile_type7(std::vector<double> v, double prob);

}  // namespace cellgmm
