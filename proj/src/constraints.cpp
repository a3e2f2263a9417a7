#include "cellgmm/constraints.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>

namespace cellgmm {

namespace {

struct WeightedValue {
  double value;
  double weight;
};

double clip(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

double deviance(const std::vector<WeightedValue>& vals, double total_weight,
                double c, double m) {
  double f = 0.0;
  for (const auto& [d, u] : vals) {
    const double t = clip(d, m, c * m);
    f += (u / total_weight) * (std::log(t) + d / t);
  }
  return f;
}

// Stationary point of the deviance on an interval where the clip pattern is
// fixed: m* = (sum_L u*d + sum_U u*d/c) / (sum_L u + sum_U u), with L the
// values clipped up to m and U the values clipped down to c*m.
double interior_optimum(const std::vector<WeightedValue>& vals, double c,
                        double lo, double hi) {
  const double mid = 0.5 * (lo + hi);
  double num = 0.0;
  double den = 0.0;
  for (const auto& [d, u] : vals) {
    if (d <= mid) {
      num += u * d;
      den += u;
    } else if (d >= c * mid) {
      num += u * d / c;
      den += u;
    }
  }
  if (den <= 0.0) return mid;
  return clip(num / den, lo, hi);
}

}  // namespace

std::vector<Vector> truncate_eigenvalues(const std::vector<EigenSystem>& systems,
                                         double c) {
  if (c < 1.0) fail(ErrorCode::InvalidArgument, "eigenvalue-ratio bound c must be >= 1");
  double total_weight = 0.0;
  for (const auto& s : systems) total_weight += s.weight;
  if (total_weight <= 0.0) {
    fail(ErrorCode::AllWeightsZero, "eigenvalue truncation received zero total weight");
  }

  double max_val = 0.0;
  for (const auto& s : systems) {
    for (int j = 0; j < s.eigenvalues.size(); ++j) {
      max_val = std::max(max_val, s.eigenvalues(j));
    }
  }
  if (max_val <= 0.0) max_val = 1.0;
  const double floor_val = 1e-12 * max_val;

  std::vector<WeightedValue> vals;
  double min_val = std::numeric_limits<double>::infinity();
  for (const auto& s : systems) {
    for (int j = 0; j < s.eigenvalues.size(); ++j) {
      const double d = std::max(s.eigenvalues(j), floor_val);
      vals.push_back({d, s.weight});
      min_val = std::min(min_val, d);
    }
  }

  auto copy_floored = [&](bool clipped, double m) {
    std::vector<Vector> out;
    out.reserve(systems.size());
    for (const auto& s : systems) {
      Vector v = s.eigenvalues;
      for (int j = 0; j < v.size(); ++j) {
        const double d = std::max(v(j), floor_val);
        v(j) = clipped ? clip(d, m, c * m) : d;
      }
      out.push_back(std::move(v));
    }
    return out;
  };

  if (max_val / min_val <= c) {
    return copy_floored(false, 0.0);
  }

  // The deviance is piecewise smooth with breakpoints where some value meets
  // m or c*m; scanning every pattern interval with its closed-form interior
  // optimum finds the global minimizer.
  std::vector<double> breaks;
  breaks.reserve(2 * vals.size() + 2);
  for (const auto& [d, u] : vals) {
    (void)u;
    breaks.push_back(d);
    breaks.push_back(d / c);
  }
  breaks.push_back(min_val / c);
  breaks.push_back(max_val);
  std::sort(breaks.begin(), breaks.end());
  breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());

  double best_m = breaks.front();
  double best_f = std::numeric_limits<double>::infinity();
  auto consider = [&](double m) {
    if (!(m > 0.0)) return;
    const double f = deviance(vals, total_weight, c, m);
    if (f < best_f) {
      best_f = f;
      best_m = m;
    }
  };
  for (std::size_t k = 0; k < breaks.size(); ++k) {
    consider(breaks[k]);
    if (k + 1 < breaks.size()) {
      consider(interior_optimum(vals, c, breaks[k], breaks[k + 1]));
    }
  }

  return copy_floored(true, best_m);
}

MixtureParams apply_constraint(const MixtureParams& params,
                               const std::vector<double>& weights, double c) {
  std::vector<EigenSystem> systems;
  systems.reserve(params.covariances.size());
  for (std::size_t g = 0; g < params.covariances.size(); ++g) {
    Eigen::SelfAdjointEigenSolver<Matrix> solver(params.covariances[g]);
    EigenSystem sys;
    // SelfAdjointEigenSolver sorts ascending; flip to descending.
    const int p = static_cast<int>(params.covariances[g].rows());
    sys.eigenvalues = solver.eigenvalues().reverse();
    sys.eigenvectors = solver.eigenvectors().rowwise().reverse();
    sys.weight = weights.empty() ? 1.0 : weights[g];
    (void)p;
    systems.push_back(std::move(sys));
  }

  const std::vector<Vector> truncated = truncate_eigenvalues(systems, c);

  bool changed = false;
  for (std::size_t g = 0; g < systems.size(); ++g) {
    if ((truncated[g] - systems[g].eigenvalues).cwiseAbs().maxCoeff() > 0.0) {
      changed = true;
      break;
    }
  }
  if (!changed) return params;

  MixtureParams out = params;
  for (std::size_t g = 0; g < systems.size(); ++g) {
    const Matrix& v = systems[g].eigenvectors;
    Matrix sigma = v * truncated[g].asDiagonal() * v.transpose();
    out.covariances[g] = 0.5 * (sigma + sigma.transpose());
  }
  return out;
}

MixtureParams apply_constraint(const MixtureParams& params,
                               const Posterior& posterior, double c) {
  std::vector<double> weights(params.g());
  for (int g = 0; g < params.g(); ++g) {
    weights[g] = posterior.z.col(g).sum();
  }
  return apply_constraint(params, weights, c);
}

}  // namespace cellgmm
