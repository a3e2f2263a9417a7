#include "cellgmm/simlab.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "cellgmm/gauss.hpp"
#include "cellgmm/stats.hpp"

namespace cellgmm {

namespace {

constexpr int kMeanRejectionBudget = 10000;
constexpr int kOverlapDrawBudget = 200;
constexpr int kCellRejectionBudget = 10000;
constexpr int kOverlapSamples = 100000;

Vector random_uniform_vector(int p, double lo, double hi, Rng& rng) {
  Vector v(p);
  for (int j = 0; j < p; ++j) v(j) = rng.uniform(lo, hi);
  return v;
}

// Uniform random rotation: QR of a Gaussian matrix with the R diagonal's
// signs folded into Q.
Matrix random_rotation(int p, Rng& rng) {
  Matrix a(p, p);
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < p; ++j) a(i, j) = rng.normal();
  }
  Eigen::HouseholderQR<Matrix> qr(a);
  Matrix q = qr.householderQ();
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < p; ++j) {
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  return q;
}

}  // namespace

Matrix ar1_covariance(int p, double rho) {
  if (!(std::abs(rho) < 1.0)) {
    fail(ErrorCode::InvalidArgument, "ar1 correlation must satisfy |rho| < 1");
  }
  Matrix s(p, p);
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < p; ++j) s(i, j) = std::pow(rho, std::abs(i - j));
  }
  return s;
}

std::vector<Vector> generate_means(int g, int p, Separation separation, Rng& rng) {
  std::vector<Vector> means(g);
  means[0] = Vector::Zero(p);
  if (g == 1) return means;
  if (separation == Separation::close) {
    for (int k = 1; k < g; ++k) means[k] = random_uniform_vector(p, 1.0, 3.0, rng);
    return means;
  }
  for (int attempt = 0; attempt < kMeanRejectionBudget; ++attempt) {
    for (int k = 1; k < g; ++k) means[k] = random_uniform_vector(p, 0.0, 10.0, rng);
    bool ok = true;
    for (int a = 0; a < g && ok; ++a) {
      for (int b = a + 1; b < g && ok; ++b) {
        if ((means[a] - means[b]).norm() < 5.0) ok = false;
      }
    }
    if (ok) return means;
  }
  fail(ErrorCode::RejectionBudgetExceeded,
       "could not draw component means with pairwise distance >= 5");
}

OverlapEstimate estimate_overlap(const MixtureParams& params, int n_mc, Rng& rng) {
  const int g = params.g();
  const int p = params.p();
  OverlapEstimate out;
  out.directed = Matrix::Zero(g, g);
  out.omega_max = 0.0;
  if (g < 2) return out;

  std::vector<Eigen::LLT<Matrix>> llts(g);
  std::vector<double> log_norm(g);
  for (int k = 0; k < g; ++k) {
    llts[k].compute(params.covariances[k]);
    double log_det = 0.0;
    for (int j = 0; j < p; ++j) log_det += 2.0 * std::log(llts[k].matrixLLT()(j, j));
    log_norm[k] = std::log(params.weights(k)) - 0.5 * (p * kLog2Pi + log_det);
  }

  Vector zvec(p), x(p);
  std::vector<double> score(g);
  for (int src = 0; src < g; ++src) {
    Eigen::ArrayXd exceed = Eigen::ArrayXd::Zero(g);
    for (int s = 0; s < n_mc; ++s) {
      for (int j = 0; j < p; ++j) zvec(j) = rng.normal();
      x = params.means[src] + llts[src].matrixL() * zvec;
      for (int k = 0; k < g; ++k) {
        score[k] =
            log_norm[k] -
            0.5 * llts[k].matrixL().solve(x - params.means[k]).squaredNorm();
      }
      for (int k = 0; k < g; ++k) {
        if (k == src) continue;
        // exact ties split evenly (identical components overlap at 0.5)
        if (score[k] > score[src]) {
          exceed(k) += 1.0;
        } else if (score[k] == score[src]) {
          exceed(k) += 0.5;
        }
      }
    }
    for (int k = 0; k < g; ++k) {
      if (k != src) out.directed(src, k) = exceed(k) / n_mc;
    }
  }
  for (int a = 0; a < g; ++a) {
    for (int b = a + 1; b < g; ++b) {
      out.omega_max = std::max(out.omega_max, out.directed(a, b) + out.directed(b, a));
    }
  }
  return out;
}

ScenarioSpec build_scenario(int id) {
  ScenarioSpec spec;
  spec.id = id;
  switch (id) {
    case 1:
    case 2:
    case 4:
    case 5:
      spec.n = 200;
      spec.p = 5;
      spec.g = 2;
      spec.weights = Vector(2);
      spec.weights << 0.3, 0.7;
      spec.separation = (id == 2 || id == 5) ? Separation::close
                                             : Separation::well_separated;
      spec.cov_family = (id >= 4) ? CovFamily::ar1_rotated : CovFamily::ar1;
      spec.missing_rate = (id >= 4) ? 0.05 : 0.0;
      break;
    case 3:
    case 6:
      spec.n = 400;
      spec.p = 15;
      spec.g = 4;
      spec.weights = Vector(4);
      spec.weights << 0.2, 0.2, 0.3, 0.3;
      spec.separation = Separation::well_separated;
      spec.cov_family = (id == 6) ? CovFamily::ar1_rotated : CovFamily::ar1;
      spec.missing_rate = (id == 6) ? 0.05 : 0.0;
      break;
    default:
      fail(ErrorCode::UnknownScenario, "scenario id must be 1..6, got " +
                                           std::to_string(id));
  }
  return spec;
}

GroundTruth generate_truth(const ScenarioSpec& spec, Rng& rng) {
  const int n = spec.n;
  const int p = spec.p;
  const int g = spec.g;
  if (spec.weights.size() != g) {
    fail(ErrorCode::InvalidArgument, "scenario weights length must equal G");
  }

  GroundTruth truth;
  truth.true_params.weights = spec.weights;
  truth.true_params.covariances.resize(g);
  const Matrix base = ar1_covariance(p, spec.rho);
  if (spec.cov_family == CovFamily::ar1) {
    for (int k = 0; k < g; ++k) truth.true_params.covariances[k] = base;
  } else {
    Rng rot_stream = rng.split(11);
    const Matrix q = random_rotation(p, rot_stream);
    const Matrix rotated = q * base * q.transpose();
    const int first_rotated = (g + 1) / 2;
    for (int k = 0; k < g; ++k) {
      truth.true_params.covariances[k] = (k < first_rotated) ? base : rotated;
    }
  }

  // Mean draws are screened against the separation regime's overlap window.
  Rng mean_stream = rng.split(12);
  Rng mc_stream = rng.split(13);
  std::vector<Vector> best_means;
  double best_gap = std::numeric_limits<double>::infinity();
  for (int draw = 0; draw < kOverlapDrawBudget; ++draw) {
    std::vector<Vector> means = generate_means(g, p, spec.separation, mean_stream);
    truth.true_params.means = means;
    const OverlapEstimate overlap =
        estimate_overlap(truth.true_params, kOverlapSamples, mc_stream);
    double gap;
    if (spec.separation == Separation::well_separated) {
      gap = (overlap.omega_max < 0.01) ? 0.0 : overlap.omega_max - 0.01;
    } else {
      gap = (overlap.omega_max > 0.05 && overlap.omega_max < 0.06)
                ? 0.0
                : std::abs(overlap.omega_max - 0.055);
    }
    if (gap < best_gap) {
      best_gap = gap;
      best_means = means;
    }
    if (gap == 0.0) break;
  }
  truth.true_params.means = best_means;

  std::vector<Eigen::LLT<Matrix>> llts(g);
  for (int k = 0; k < g; ++k) llts[k].compute(truth.true_params.covariances[k]);

  Rng sample_stream = rng.split(14);
  truth.clean_values.resize(n, p);
  truth.labels.resize(n);
  Vector zvec(p);
  for (int i = 0; i < n; ++i) {
    const double u = sample_stream.uniform01();
    int label = g - 1;
    double cum = 0.0;
    for (int k = 0; k < g; ++k) {
      cum += spec.weights(k);
      if (u < cum) {
        label = k;
        break;
      }
    }
    truth.labels[i] = label;
    for (int j = 0; j < p; ++j) zvec(j) = sample_stream.normal();
    truth.clean_values.row(i) =
        (truth.true_params.means[label] + llts[label].matrixL() * zvec).transpose();
  }
  truth.outlier_mask = IntMatrix::Zero(n, p);
  truth.missing_mask = IntMatrix::Zero(n, p);
  return truth;
}

DataSet contaminate_random(GroundTruth& truth, double rate, double lo, double hi,
                           bool enforce_ellipsoid, Rng& rng) {
  const int n = static_cast<int>(truth.clean_values.rows());
  const int p = static_cast<int>(truth.clean_values.cols());
  Matrix values = truth.clean_values;
  const int n_cells = static_cast<int>(std::ceil(rate * n * p));
  if (n_cells == 0) return DataSet::fully_observed(std::move(values));

  const std::vector<int> cells = rng.sample_without_replacement(n * p, n_cells);
  std::map<int, std::vector<int>> by_row;
  for (int c : cells) by_row[c / p].push_back(c % p);

  const int g = truth.true_params.g();
  std::vector<SpdFactor> factors;
  factors.reserve(g);
  double cutoff = 0.0;
  if (enforce_ellipsoid) {
    for (int k = 0; k < g; ++k) {
      factors.emplace_back(truth.true_params.covariances[k]);
    }
    cutoff = chi_squared_quantile(static_cast<double>(p), 0.99);
  }

  for (const auto& [row, cols] : by_row) {
    bool accepted = false;
    for (int attempt = 0; attempt < kCellRejectionBudget; ++attempt) {
      for (int j : cols) values(row, j) = rng.uniform(lo, hi);
      if (!enforce_ellipsoid) {
        accepted = true;
        break;
      }
      const Vector x = values.row(row).transpose();
      bool outside_all = true;
      for (int k = 0; k < g && outside_all; ++k) {
        const double d2 =
            factors[k].quad_form(x - truth.true_params.means[k]);
        if (d2 <= cutoff) outside_all = false;
      }
      if (outside_all) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      fail(ErrorCode::RejectionBudgetExceeded,
           "row " + std::to_string(row) + " never left every 99th percentile ellipsoid");
    }
    for (int j : cols) truth.outlier_mask(row, j) = 1;
  }
  return DataSet::fully_observed(std::move(values));
}

DataSet contaminate_structural(GroundTruth& truth, double rate_per_column,
                               double gamma, Rng& rng) {
  const int n = static_cast<int>(truth.clean_values.rows());
  const int p = static_cast<int>(truth.clean_values.cols());
  Matrix values = truth.clean_values;

  std::vector<int> comp1_rows;
  for (int i = 0; i < n; ++i) {
    if (truth.labels[i] == 0) comp1_rows.push_back(i);
  }
  if (comp1_rows.empty()) {
    fail(ErrorCode::InvalidArgument, "structural contamination needs component-1 rows");
  }
  const int m = static_cast<int>(
      std::ceil(rate_per_column * static_cast<double>(comp1_rows.size())));

  // Constant contamination count per column, variable set per row.
  std::vector<std::vector<int>> k_sets(n);
  for (int j = 0; j < p; ++j) {
    const std::vector<int> picks =
        rng.sample_without_replacement(static_cast<int>(comp1_rows.size()), m);
    for (int a : picks) k_sets[comp1_rows[a]].push_back(j);
  }

  const Vector& mu1 = truth.true_params.means[0];
  const Matrix& sigma1 = truth.true_params.covariances[0];
  for (int i = 0; i < n; ++i) {
    const std::vector<int>& k_set = k_sets[i];
    if (k_set.empty()) continue;
    const int k = static_cast<int>(k_set.size());
    const Matrix block = submatrix(sigma1, k_set, k_set);
    Eigen::SelfAdjointEigenSolver<Matrix> solver(block);
    Vector nu = solver.eigenvectors().col(k - 1);  // largest eigenvalue
    int arg = 0;
    nu.cwiseAbs().maxCoeff(&arg);
    if (nu(arg) < 0.0) nu = -nu;
    const double md = mahalanobis(nu, Vector::Zero(k), block);
    const Vector replacement =
        subvector(mu1, k_set) - gamma * std::sqrt(static_cast<double>(k)) * nu / md;
    for (int a = 0; a < k; ++a) {
      values(i, k_set[a]) = replacement(a);
      truth.outlier_mask(i, k_set[a]) = 1;
    }
  }
  return DataSet::fully_observed(std::move(values));
}

DataSet remove_missing(const DataSet& data, GroundTruth& truth,
                       double missing_rate, Rng& rng) {
  const int n = data.n();
  const int p = data.p();
  const int n_cells = static_cast<int>(std::ceil(missing_rate * n * p));
  DataSet out = data;
  if (n_cells == 0) return out;

  std::vector<int> eligible;
  eligible.reserve(n * p);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) {
      if (truth.outlier_mask(i, j) == 0) eligible.push_back(i * p + j);
    }
  }
  if (static_cast<int>(eligible.size()) < n_cells) {
    fail(ErrorCode::NotEnoughCells, "not enough uncontaminated cells to remove");
  }
  const std::vector<int> picks =
      rng.sample_without_replacement(static_cast<int>(eligible.size()), n_cells);
  for (int a : picks) {
    const int cell = eligible[a];
    out.observed(cell / p, cell % p) = 0;
    truth.missing_mask(cell / p, cell % p) = 1;
  }
  return out;
}

SimulatedSample simulate(const ScenarioSpec& spec, Rng& rng) {
  SimulatedSample sample;
  Rng truth_stream = rng.split(21);
  Rng contam_stream = rng.split(22);
  Rng missing_stream = rng.split(23);
  sample.truth = generate_truth(spec, truth_stream);
  switch (spec.contamination.kind) {
    case ContaminationKind::none:
      sample.data = DataSet::fully_observed(sample.truth.clean_values);
      break;
    case ContaminationKind::uniform:
      sample.data = contaminate_random(sample.truth, spec.contamination_rate,
                                       spec.contamination.lo, spec.contamination.hi,
                                       true, contam_stream);
      break;
    case ContaminationKind::extreme:
      sample.data = contaminate_random(sample.truth, spec.contamination_rate,
                                       spec.contamination.lo, spec.contamination.hi,
                                       false, contam_stream);
      break;
    case ContaminationKind::structural:
      sample.data = contaminate_structural(sample.truth, spec.contamination_rate,
                                           spec.contamination.gamma, contam_stream);
      break;
  }
  if (spec.missing_rate > 0.0) {
    sample.data = remove_missing(sample.data, sample.truth, spec.missing_rate,
                                 missing_stream);
  }
  return sample;
}

const char* contamination_kind_name(ContaminationKind kind) {
  switch (kind) {
    case ContaminationKind::none: return "none";
    case ContaminationKind::uniform: return "standard";
    case ContaminationKind::extreme: return "extreme";
    case ContaminationKind::structural: return "structural";
  }
  return "unknown";
}

}  // namespace cellgmm
