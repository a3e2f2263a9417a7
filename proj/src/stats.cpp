#include "cellgmm/stats.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <cmath>

#include "cellgmm/types.hpp"

namespace cellgmm {

double chi_squared_quantile(double dof, double prob) {
  if (!(dof > 0.0) || !(prob > 0.0) || !(prob < 1.0)) {
    fail(ErrorCode::InvalidArgument, "chi-squared quantile needs dof > 0 and prob in (0,1)");
  }
  boost::math::chi_squared_distribution<double> dist(dof);
  return boost::math::quantile(dist, prob);
}

double quantile_type7(std::vector<double> v, double prob) {
  if (v.empty()) fail(ErrorCode::InvalidArgument, "quantile of empty sample");
  std::sort(v.begin(), v.end());
  const double idx = prob * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(idx));
  const auto hi = static_cast<std::size_t>(std::ceil(idx));
  const double frac = idx - static_cast<double>(lo);
  return (1.0 - frac) * v[lo] + frac * v[hi];
}

}  // namespace cellgmm
