#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>

#include "cellgmm/constraints.hpp"
#include "cellgmm/em.hpp"
#include "cellgmm/gauss.hpp"
#include "cellgmm/rng.hpp"
#include "cellgmm/stats.hpp"

using namespace cellgmm;

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;
constexpr double kChi2_1_99 = 6.6348966010212145;  // standard table value

Matrix random_spd(int p, Rng& rng, double eig_lo = 0.3, double eig_hi = 3.0) {
  Matrix a(p, p);
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < p; ++j) a(i, j) = rng.normal();
  }
  const Eigen::HouseholderQR<Matrix> qr(a);
  const Matrix q = qr.householderQ();
  Vector eig(p);
  for (int j = 0; j < p; ++j) eig(j) = rng.uniform(eig_lo, eig_hi);
  Matrix s = q * eig.asDiagonal() * q.transpose();
  return 0.5 * (s + s.transpose());
}

MixtureParams random_params(int g, int p, Rng& rng, double mean_scale = 3.0) {
  MixtureParams params;
  params.weights = Vector(g);
  double total = 0.0;
  for (int k = 0; k < g; ++k) {
    params.weights(k) = rng.uniform(0.2, 1.0);
    total += params.weights(k);
  }
  params.weights /= total;
  for (int k = 0; k < g; ++k) {
    Vector mu(p);
    for (int j = 0; j < p; ++j) mu(j) = mean_scale * rng.normal();
    params.means.push_back(mu);
    params.covariances.push_back(random_spd(p, rng));
  }
  return params;
}

MixtureParams standard_params(int g, int p) {
  MixtureParams params;
  params.weights = Vector::Constant(g, 1.0 / g);
  for (int k = 0; k < g; ++k) {
    params.means.push_back(Vector::Zero(p));
    params.covariances.push_back(Matrix::Identity(p, p));
  }
  return params;
}

// Two well-separated Gaussian blobs, fully observed.
DataSet two_blob_data(int n, int p, double gap, Rng& rng, std::vector<int>* labels) {
  Matrix values(n, p);
  for (int i = 0; i < n; ++i) {
    const int label = (rng.uniform01() < 0.4) ? 0 : 1;
    if (labels) labels->push_back(label);
    for (int j = 0; j < p; ++j) {
      values(i, j) = rng.normal() + (label == 0 ? 0.0 : gap);
    }
  }
  return DataSet::fully_observed(std::move(values));
}

ConditionalMoments conditional_oracle(const Vector& x,
                                      const std::vector<int>& reliable,
                                      const std::vector<int>& target,
                                      const Vector& mu, const Matrix& sigma) {
  ConditionalMoments out;
  const Matrix precision = sigma.inverse();
  const Matrix cov_t = submatrix(precision, target, target).inverse();
  out.cond_cov = cov_t;
  if (reliable.empty()) {
    out.cond_mean = subvector(mu, target);
    return out;
  }
  const Matrix prec_tr = submatrix(precision, target, reliable);
  const Vector d = subvector(x, reliable) - subvector(mu, reliable);
  out.cond_mean = subvector(mu, target) - cov_t * prec_tr * d;
  return out;
}

}  // namespace

TEST_CASE("row_contribution reduces to the single-component density") {
  Rng rng(3);
  const int p = 3;
  MixtureParams params = random_params(1, p, rng);
  Vector x(p);
  x << 0.3, -1.0, 2.0;
  IntVector w(p);
  w << 1, 1, 1;
  CHECK(row_contribution(x, w, params) ==
        doctest::Approx(log_density_masked(x, w, params.means[0],
                                           params.covariances[0]))
            .epsilon(1e-12));
}

TEST_CASE("row_contribution of an empty mask is zero") {
  MixtureParams params = standard_params(3, 2);
  Vector x(2);
  x << 100.0, -50.0;
  const IntVector w = IntVector::Zero(2);
  CHECK(row_contribution(x, w, params) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("identical components collapse to one normal") {
  MixtureParams params = standard_params(2, 1);
  Vector x(1);
  x << 0.0;
  IntVector w(1);
  w << 1;
  CHECK(row_contribution(x, w, params) ==
        doctest::Approx(-kHalfLog2Pi).epsilon(1e-10));
}

TEST_CASE("delta_unpenalized hand examples") {
  MixtureParams params = standard_params(1, 2);
  IntVector w(2);
  w << 1, 1;
  Vector x(2);
  x << 3.0, 0.0;
  CHECK(delta_unpenalized(x, w, 0, params) ==
        doctest::Approx(-kHalfLog2Pi - 4.5).epsilon(1e-10));
  x << 0.0, 0.0;
  CHECK(delta_unpenalized(x, w, 0, params) ==
        doctest::Approx(-kHalfLog2Pi).epsilon(1e-10));
}

TEST_CASE("delta_unpenalized equals the conditional scalar density for G=1") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const int p = 2 + rng.below(4);
    MixtureParams params = random_params(1, p, rng);
    Vector x(p);
    for (int j = 0; j < p; ++j) x(j) = 3.0 * rng.normal();
    IntVector w(p);
    for (int j = 0; j < p; ++j) w(j) = rng.below(2);
    const int j = rng.below(p);

    // Marginalize to reliable-plus-j, then condition through the precision
    // matrix of that block.
    std::vector<int> sub;
    int j_pos = -1;
    for (int k = 0; k < p; ++k) {
      if (k == j || w(k) != 0) {
        if (k == j) j_pos = static_cast<int>(sub.size());
        sub.push_back(k);
      }
    }
    const Vector x_s = subvector(x, sub);
    const Vector mu_s = subvector(params.means[0], sub);
    const Matrix sigma_s = submatrix(params.covariances[0], sub, sub);
    std::vector<int> rel_s;
    for (int a = 0; a < static_cast<int>(sub.size()); ++a) {
      if (a != j_pos) rel_s.push_back(a);
    }
    const ConditionalMoments cm =
        conditional_oracle(x_s, rel_s, {j_pos}, mu_s, sigma_s);
    const double log_phi1 =
        -0.5 * (kLog2Pi + std::log(cm.cond_cov(0, 0)) +
                std::pow(x(j) - cm.cond_mean(0), 2) / cm.cond_cov(0, 0));
    CHECK(delta_unpenalized(x, w, j, params) ==
          doctest::Approx(log_phi1).epsilon(1e-10));
  }
}

TEST_CASE("delta_penalized with q=0 matches delta_unpenalized for G=1") {
  Rng rng(13);
  Vector z1(1);
  z1 << 1.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int p = 2 + rng.below(4);
    MixtureParams params = random_params(1, p, rng);
    Vector x(p);
    for (int j = 0; j < p; ++j) x(j) = 3.0 * rng.normal();
    IntVector w(p);
    for (int j = 0; j < p; ++j) w(j) = rng.below(2);
    const int j = rng.below(p);
    CHECK(delta_penalized(x, w, j, params, z1, 0.0) ==
          doctest::Approx(delta_unpenalized(x, w, j, params)).epsilon(1e-8));
  }
}

TEST_CASE("penalized delta flags the planted cell of the hand example") {
  MixtureParams params = standard_params(1, 2);
  IntVector w(2);
  w << 1, 1;
  Vector x(2);
  x << 3.0, 0.0;
  Vector z1(1);
  z1 << 1.0;
  const double q = 0.5 * (kChi2_1_99 + kLog2Pi);
  CHECK(q == doctest::Approx(4.2364).epsilon(1e-4));
  const double delta = delta_penalized(x, w, 0, params, z1, q);
  CHECK(delta == doctest::Approx(-5.4189385 + 4.2363868).epsilon(1e-5));
  CHECK(delta < 0.0);  // flaggable

  // A cell sitting at its conditional mean with unit conditional variance is
  // kept with margin chi2/2.
  x << 0.0, 0.0;
  CHECK(delta_penalized(x, w, 0, params, z1, q) ==
        doctest::Approx(0.5 * kChi2_1_99).epsilon(1e-8));
}

TEST_CASE("update_mask_column keeps the h largest deltas") {
  Vector deltas(4);
  deltas << 5.0, 1.0, -2.0, 0.0;
  const IntVector observed = IntVector::Ones(4);
  const IntVector col = update_mask_column(deltas, observed, 3, false);
  CHECK(col(0) == 1);
  CHECK(col(1) == 1);
  CHECK(col(2) == 0);
  CHECK(col(3) == 1);
}

TEST_CASE("penalized rule a keeps every nonnegative delta") {
  Vector deltas(4);
  deltas << 0.5, 0.1, 0.0, -1.0;
  const IntVector observed = IntVector::Ones(4);
  const IntVector col = update_mask_column(deltas, observed, 2, true);
  CHECK(col(0) == 1);
  CHECK(col(1) == 1);
  CHECK(col(2) == 1);
  CHECK(col(3) == 0);
}

TEST_CASE("penalized rule b falls back to the h largest") {
  Vector deltas(4);
  deltas << 0.5, -1.0, -2.0, -3.0;
  const IntVector observed = IntVector::Ones(4);
  const IntVector col = update_mask_column(deltas, observed, 3, true);
  CHECK(col(0) == 1);
  CHECK(col(1) == 1);
  CHECK(col(2) == 1);
  CHECK(col(3) == 0);
}

TEST_CASE("update_mask_column zeroes missing cells and breaks ties by row") {
  Vector deltas(5);
  deltas << 1.0, 1.0, 1.0, 1.0, 99.0;
  IntVector observed = IntVector::Ones(5);
  observed(4) = 0;  // the best delta is unobserved and must stay 0
  const IntVector col = update_mask_column(deltas, observed, 2, false);
  CHECK(col(4) == 0);
  CHECK(col(0) == 1);  // ties resolved toward smaller row index
  CHECK(col(1) == 1);
  CHECK(col(2) == 0);
  CHECK(col(3) == 0);
}

TEST_CASE("e_step is degenerate for a single component") {
  Rng rng(17);
  DataSet data = two_blob_data(40, 3, 0.0, rng, nullptr);
  const CellMask mask = CellMask::all_reliable(40, 3);
  MixtureParams params = random_params(1, 3, rng);
  const EStepResult es = e_step(data, mask, params);
  for (int i = 0; i < 40; ++i) CHECK(es.z(i, 0) == 1.0);
}

TEST_CASE("e_step posteriors saturate for well separated components") {
  const int p = 2;
  MixtureParams params = standard_params(2, p);
  params.means[1] = Vector::Constant(p, 20.0);
  Matrix values(1, p);
  values << 0.0, 0.0;
  DataSet data = DataSet::fully_observed(values);
  const CellMask mask = CellMask::all_reliable(1, p);
  const EStepResult es = e_step(data, mask, params);
  CHECK(es.z(0, 0) >= 1.0 - 1e-6);
}

TEST_CASE("e_step matches the direct softmax of masked log densities") {
  Rng rng(19);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 15, p = 4, g = 3;
    Matrix values(n, p);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < p; ++j) values(i, j) = 2.0 * rng.normal();
    }
    DataSet data = DataSet::fully_observed(values);
    CellMask mask = CellMask::all_reliable(n, p);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < p; ++j) {
        if (rng.uniform01() < 0.3) mask.w(i, j) = 0;
      }
    }
    const MixtureParams params = random_params(g, p, rng);
    const EStepResult es = e_step(data, mask, params);
    for (int i = 0; i < n; ++i) {
      std::vector<double> terms(g);
      for (int k = 0; k < g; ++k) {
        terms[k] =
            std::log(params.weights(k)) +
            log_density_masked(values.row(i).transpose(),
                               mask.w.row(i).transpose(), params.means[k],
                               params.covariances[k]);
      }
      const double lse = log_sum_exp(terms);
      double row_sum = 0.0;
      for (int k = 0; k < g; ++k) {
        CHECK(es.z(i, k) == doctest::Approx(std::exp(terms[k] - lse)).epsilon(1e-12));
        row_sum += es.z(i, k);
      }
      CHECK(row_sum == doctest::Approx(1.0).epsilon(1e-10));
    }
  }
}

TEST_CASE("m_step with a fully reliable mask is the weighted sample update") {
  Rng rng(23);
  const int n = 30, p = 3;
  std::vector<int> labels;
  DataSet data = two_blob_data(n, p, 8.0, rng, &labels);
  const CellMask mask = CellMask::all_reliable(n, p);
  MixtureParams params = standard_params(2, p);
  params.means[1] = Vector::Constant(p, 8.0);
  EStepResult es = e_step(data, mask, params);
  // hard posterior
  for (int i = 0; i < n; ++i) {
    es.z(i, 0) = labels[i] == 0 ? 1.0 : 0.0;
    es.z(i, 1) = 1.0 - es.z(i, 0);
  }
  const MixtureParams out = m_step(data, mask, es, 1e9);
  for (int k = 0; k < 2; ++k) {
    double n_k = 0.0;
    Vector mean = Vector::Zero(p);
    for (int i = 0; i < n; ++i) {
      if (labels[i] == k) {
        n_k += 1.0;
        mean += data.values.row(i).transpose();
      }
    }
    mean /= n_k;
    Matrix cov = Matrix::Zero(p, p);
    for (int i = 0; i < n; ++i) {
      if (labels[i] == k) {
        const Vector c = data.values.row(i).transpose() - mean;
        cov += c * c.transpose();
      }
    }
    cov /= n_k;  // biased, 1/n_g
    CHECK((out.means[k] - mean).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((out.covariances[k] - cov).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(out.weights(k) == doctest::Approx(n_k / n).epsilon(1e-12));
  }
}

TEST_CASE("m_step matches the term-by-term Q-function oracle") {
  Rng rng(29);
  const int n = 10, p = 3, g = 2;
  for (int trial = 0; trial < 10; ++trial) {
    Matrix values(n, p);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < p; ++j) values(i, j) = 2.0 * rng.normal();
    }
    DataSet data = DataSet::fully_observed(values);
    CellMask mask = CellMask::all_reliable(n, p);
    for (int i = 0; i < n; ++i) {
      const int flips = rng.below(p);  // keep at least one reliable cell
      for (int f = 0; f < flips; ++f) mask.w(i, rng.below(p)) = 0;
    }
    const MixtureParams params = random_params(g, p, rng);
    const EStepResult es = e_step(data, mask, params);
    const MixtureParams got = m_step(data, mask, es, 1e12);

    // Oracle: assemble E[(x - mu*)(x - mu*)' | reliable, z_ig = 1] blockwise
    // with full-inverse conditionals, then average.
    for (int k = 0; k < g; ++k) {
      double n_k = 0.0;
      std::vector<Vector> expected_rows(n);
      for (int i = 0; i < n; ++i) {
        n_k += es.z(i, k);
        std::vector<int> reliable, target;
        for (int j = 0; j < p; ++j) {
          (mask.w(i, j) != 0 ? reliable : target).push_back(j);
        }
        Vector ex = values.row(i).transpose();
        if (!target.empty()) {
          const ConditionalMoments cm =
              conditional_oracle(ex, reliable, target, params.means[k],
                                 params.covariances[k]);
          for (std::size_t a = 0; a < target.size(); ++a) {
            ex(target[a]) = cm.cond_mean(a);
          }
        }
        expected_rows[i] = ex;
      }
      Vector mu_star = Vector::Zero(p);
      for (int i = 0; i < n; ++i) mu_star += es.z(i, k) * expected_rows[i];
      mu_star /= n_k;
      CHECK((got.means[k] - mu_star).cwiseAbs().maxCoeff() < 1e-10);
      CHECK(got.weights(k) == doctest::Approx(n_k / n).epsilon(1e-12));

      Matrix sigma_star = Matrix::Zero(p, p);
      for (int i = 0; i < n; ++i) {
        std::vector<int> reliable, target;
        for (int j = 0; j < p; ++j) {
          (mask.w(i, j) != 0 ? reliable : target).push_back(j);
        }
        const Vector centered = expected_rows[i] - mu_star;
        Matrix outer = centered * centered.transpose();
        if (!target.empty()) {
          const ConditionalMoments cm = conditional_oracle(
              values.row(i).transpose(), reliable, target, params.means[k],
              params.covariances[k]);
          for (std::size_t a = 0; a < target.size(); ++a) {
            for (std::size_t b = 0; b < target.size(); ++b) {
              outer(target[a], target[b]) += cm.cond_cov(a, b);
            }
          }
        }
        sigma_star += es.z(i, k) * outer;
      }
      sigma_star /= n_k;
      CHECK((got.covariances[k] - sigma_star).cwiseAbs().maxCoeff() < 1e-10);
    }
  }
}

TEST_CASE("empty component aborts the m_step") {
  Rng rng(31);
  DataSet data = two_blob_data(20, 2, 0.0, rng, nullptr);
  const CellMask mask = CellMask::all_reliable(20, 2);
  MixtureParams params = standard_params(2, 2);
  EStepResult es = e_step(data, mask, params);
  es.z.col(1).setZero();
  es.z.col(0).setOnes();
  try {
    m_step(data, mask, es, 100.0);
    FAIL("expected EmptyComponent");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyComponent);
  }
}

TEST_CASE("compute_penalty for identity covariances hits the closed form") {
  Rng rng(37);
  const int n = 6, p = 3, g = 2;
  DataSet data = two_blob_data(n, p, 0.0, rng, nullptr);
  const CellMask mask = CellMask::all_reliable(n, p);
  const MixtureParams params = standard_params(g, p);
  Matrix z(n, g);
  for (int i = 0; i < n; ++i) {
    z(i, 0) = rng.uniform01();
    z(i, 1) = 1.0 - z(i, 0);
  }
  const PenaltyMatrix penalty = compute_penalty(data, mask, params, z, 0.01);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) {
      CHECK(penalty.q(i, j) == doctest::Approx(4.2364).epsilon(1e-4));
      CHECK(penalty.q(i, j) ==
            doctest::Approx(0.5 * (kChi2_1_99 + kLog2Pi)).epsilon(1e-10));
    }
  }
}

TEST_CASE("compute_penalty is invariant to component relabeling") {
  Rng rng(41);
  const int n = 5, p = 3, g = 3;
  DataSet data = two_blob_data(n, p, 0.0, rng, nullptr);
  const CellMask mask = CellMask::all_reliable(n, p);
  MixtureParams params = random_params(g, p, rng);
  Matrix z(n, g);
  for (int i = 0; i < n; ++i) {
    double total = 0.0;
    for (int k = 0; k < g; ++k) {
      z(i, k) = rng.uniform(0.1, 1.0);
      total += z(i, k);
    }
    z.row(i) /= total;
  }
  const PenaltyMatrix q1 = compute_penalty(data, mask, params, z, 0.01);

  // rotate component labels by one
  MixtureParams rotated;
  rotated.weights = Vector(g);
  Matrix z_rot(n, g);
  for (int k = 0; k < g; ++k) {
    const int src = (k + 1) % g;
    rotated.weights(k) = params.weights(src);
    rotated.means.push_back(params.means[src]);
    rotated.covariances.push_back(params.covariances[src]);
    z_rot.col(k) = z.col(src);
  }
  const PenaltyMatrix q2 = compute_penalty(data, mask, rotated, z_rot, 0.01);
  CHECK((q1.q - q2.q).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("one-hot responsibilities reduce the penalty to a single component") {
  Rng rng(43);
  const int n = 4, p = 2;
  DataSet data = two_blob_data(n, p, 0.0, rng, nullptr);
  const CellMask mask = CellMask::all_reliable(n, p);
  MixtureParams params = random_params(2, p, rng);
  Matrix z = Matrix::Zero(n, 2);
  z.col(1).setOnes();
  const PenaltyMatrix penalty = compute_penalty(data, mask, params, z, 0.01);
  const Matrix inv = params.covariances[1].inverse();
  for (int j = 0; j < p; ++j) {
    const double want = 0.5 * (std::log(1.0 / inv(j, j)) + kChi2_1_99 + kLog2Pi);
    CHECK(penalty.q(0, j) == doctest::Approx(want).epsilon(1e-10));
  }
}

TEST_CASE("aitken stopping rule") {
  CHECK(aitken_converged(-5.0, -5.0, -5.0, 1e-6));  // constant trace

  // geometric trace l_t = -1/2^t: extrapolated gap 2^{-t}
  auto l = [](int t) { return -std::pow(2.0, -t); };
  CHECK_FALSE(aitken_converged(l(1), l(2), l(3), 1e-6));
  CHECK(aitken_converged(l(20), l(21), l(22), 1e-6));

  // non-contracting trace claims nothing
  CHECK_FALSE(aitken_converged(0.0, 1.0, 2.5, 1e-6));

  // plateau followed by a jump is not converged
  CHECK_FALSE(aitken_converged(1.0, 1.0, 2.0, 1e-6));
}

TEST_CASE("c_step flags a planted outlier cell at true parameters") {
  Rng rng(47);
  const int n = 60, p = 3;
  std::vector<int> labels;
  DataSet data = two_blob_data(n, p, 10.0, rng, &labels);
  data.values(7, 1) = 80.0;  // far outside both components
  MixtureParams params = standard_params(2, p);
  params.means[1] = Vector::Constant(p, 10.0);
  params.weights << 0.4, 0.6;

  const CellMask mask = CellMask::all_reliable(n, p);
  const EStepResult es = e_step(data, mask, params);
  const int h = required_h(0.75, n);
  const CellMask out = c_step(data, mask, params, es.z,
                              PenaltyMatrix::zero(n, p), h, false);
  CHECK(out.w(7, 1) == 0);
  for (int j = 0; j < p; ++j) {
    int ones = 0;
    for (int i = 0; i < n; ++i) ones += out.w(i, j);
    CHECK(ones == h);
  }
}

TEST_CASE("c_step does not decrease the objective from a feasible state") {
  Rng rng(53);
  const int n = 50, p = 3;
  DataSet data = two_blob_data(n, p, 6.0, rng, nullptr);
  data.values(3, 0) = 40.0;
  data.values(19, 2) = -25.0;
  MixtureParams params = standard_params(2, p);
  params.means[1] = Vector::Constant(p, 6.0);
  const int h = required_h(0.75, n);

  // Start from an exactly-h mask produced by a first sweep, then assert the
  // guarantee on the second sweep.
  const CellMask all = CellMask::all_reliable(n, p);
  EStepResult es = e_step(data, all, params);
  const CellMask m1 =
      c_step(data, all, params, es.z, PenaltyMatrix::zero(n, p), h, false);
  es = e_step(data, m1, params);
  const CellMask m2 =
      c_step(data, m1, params, es.z, PenaltyMatrix::zero(n, p), h, false);
  CHECK(objective(data, m2, params) >= objective(data, m1, params) - 1e-8);

  // penalized flavor from any feasible state
  const PenaltyMatrix q = compute_penalty(data, m1, params, es.z, 0.01);
  const CellMask m3 = c_step(data, m1, params, es.z, q, h, true);
  CHECK(penalized_objective(data, m3, params, q) >=
        penalized_objective(data, m1, params, q) - 1e-8);
}

TEST_CASE("c_step commutes with row permutations") {
  Rng rng(59);
  const int n = 30, p = 3;
  DataSet data = two_blob_data(n, p, 7.0, rng, nullptr);
  MixtureParams params = standard_params(2, p);
  params.means[1] = Vector::Constant(p, 7.0);
  const int h = required_h(0.75, n);
  const CellMask mask = CellMask::all_reliable(n, p);
  const EStepResult es = e_step(data, mask, params);
  const CellMask out = c_step(data, mask, params, es.z,
                              PenaltyMatrix::zero(n, p), h, false);

  // reverse row order
  DataSet rev = data;
  for (int i = 0; i < n; ++i) rev.values.row(i) = data.values.row(n - 1 - i);
  const EStepResult es_rev = e_step(rev, mask, params);
  const CellMask out_rev = c_step(rev, mask, params, es_rev.z,
                                  PenaltyMatrix::zero(n, p), h, false);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) {
      CHECK(out.w(i, j) == out_rev.w(n - 1 - i, j));
    }
  }
}

TEST_CASE("fit on separable data recovers the structure") {
  Rng rng(61);
  const int n = 120, p = 3;
  std::vector<int> labels;
  DataSet data = two_blob_data(n, p, 9.0, rng, &labels);
  data.values(11, 2) = 60.0;
  data.observed(17, 0) = 0;  // one missing cell

  FitConfig cfg;
  cfg.g = 2;
  cfg.c = 100.0;
  cfg.seed = 5;
  cfg.n_restarts = 2;
  InitConfig icfg;
  icfg.alpha_true = 0.02;
  const FitOutputs outputs = fit_all(data, cfg, icfg);

  for (const FitResult* r : {&outputs.unpenalized, &(*outputs.penalized)}) {
    CHECK(r->converged);
    for (std::size_t t = 1; t < r->objective_trace.size(); ++t) {
      CHECK(r->objective_trace[t] >= r->objective_trace[t - 1] - 1e-8);
    }
    CHECK(r->mask.w(17, 0) == 0);  // missing cells stay unreliable
    // imputed equals the data wherever the mask is one
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < p; ++j) {
        if (r->mask.w(i, j) != 0) {
          CHECK(r->imputed(i, j) == data.values(i, j));
        }
      }
    }
  }
  // the planted cell is flagged by the penalized phase
  CHECK(outputs.penalized->mask.w(11, 2) == 0);

  // fitted labels separate the blobs (up to swap)
  const Matrix& z = outputs.penalized->posterior.z;
  int agree = 0;
  for (int i = 0; i < n; ++i) {
    int arg = 0;
    z.row(i).maxCoeff(&arg);
    agree += (arg == labels[i]) ? 1 : 0;
  }
  const double rate = static_cast<double>(std::max(agree, n - agree)) / n;
  CHECK(rate >= 0.99);
}

TEST_CASE("e_step then m_step at convergence moves the objective less than epsilon") {
  Rng rng(67);
  const int n = 100, p = 2;
  DataSet data = two_blob_data(n, p, 8.0, rng, nullptr);
  FitConfig cfg;
  cfg.g = 2;
  cfg.c = 100.0;
  cfg.seed = 9;
  cfg.n_restarts = 1;
  cfg.penalty_mode = PenaltyMode::none;
  InitConfig icfg;
  icfg.alpha_true = 0.02;
  const FitOutputs outputs = fit_all(data, cfg, icfg);
  const FitResult& r = outputs.unpenalized;
  REQUIRE(r.converged);

  const double before = objective(data, r.mask, r.params);
  const EStepResult es = e_step(data, r.mask, r.params);
  const MixtureParams refined = m_step(data, r.mask, es, cfg.c);
  const double after = objective(data, r.mask, refined);
  CHECK(after >= before - 1e-10);
  CHECK(after - before < cfg.epsilon);
}

TEST_CASE("component relabeling of the initialization permutes the fit bitwise") {
  Rng rng(71);
  const int n = 80, p = 2;
  DataSet data = two_blob_data(n, p, 8.0, rng, nullptr);
  FitConfig cfg;
  cfg.g = 2;
  cfg.c = 1e6;  // keep the spectral constraint inactive
  cfg.seed = 13;
  cfg.n_restarts = 1;

  Initialization init;
  init.mask = CellMask::all_reliable(n, p);
  init.params = standard_params(2, p);
  init.params.weights << 0.45, 0.55;
  init.params.means[1] = Vector::Constant(p, 8.0);

  Initialization swapped = init;
  std::swap(swapped.params.means[0], swapped.params.means[1]);
  std::swap(swapped.params.covariances[0], swapped.params.covariances[1]);
  swapped.params.weights << 0.55, 0.45;

  const FitResult a = fit(data, cfg, init);
  const FitResult b = fit(data, cfg, swapped);
  CHECK(a.params.weights(0) == b.params.weights(1));
  CHECK(a.params.weights(1) == b.params.weights(0));
  CHECK((a.params.means[0] - b.params.means[1]).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.params.means[1] - b.params.means[0]).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.params.covariances[0] - b.params.covariances[1]).cwiseAbs().maxCoeff() ==
        0.0);
  CHECK((a.posterior.z.col(0) - b.posterior.z.col(1)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.mask.w - b.mask.w).abs().maxCoeff() == 0);
}

TEST_CASE("standardized residuals") {
  // G=1 diagonal: r_ij = (x_ij - mu_j) / sigma_j
  const int p = 2;
  MixtureParams params = standard_params(1, p);
  Vector eig(p);
  eig << 4.0, 9.0;
  params.covariances[0] = eig.asDiagonal();
  params.means[0] << 1.0, -1.0;

  Matrix values(2, p);
  values << 3.0, -1.0, 1.0, 5.0;
  DataSet data = DataSet::fully_observed(values);
  data.observed(1, 0) = 0;
  const CellMask mask{data.observed};
  const Matrix z = Matrix::Ones(2, 1);
  const Matrix res = standardized_residuals(data, mask, params, z);
  CHECK(res(0, 0) == doctest::Approx((3.0 - 1.0) / 2.0).epsilon(1e-12));
  CHECK(res(0, 1) == doctest::Approx(0.0).epsilon(1e-12));  // at its mean
  CHECK(std::isnan(res(1, 0)));                             // missing cell
  CHECK(res(1, 1) == doctest::Approx((5.0 + 1.0) / 3.0).epsilon(1e-12));

  // the flagging threshold constant
  CHECK(std::sqrt(chi_squared_quantile(1.0, 0.99)) ==
        doctest::Approx(2.5758).epsilon(1e-4));
}

TEST_CASE("penalized objective subtracts the flagged penalty mass") {
  Rng rng(73);
  const int n = 10, p = 2;
  DataSet data = two_blob_data(n, p, 0.0, rng, nullptr);
  CellMask mask = CellMask::all_reliable(n, p);
  mask.w(0, 0) = 0;
  mask.w(4, 1) = 0;
  const MixtureParams params = standard_params(1, p);
  PenaltyMatrix penalty;
  penalty.q = Matrix::Constant(n, p, 2.5);
  CHECK(penalized_objective(data, mask, params, penalty) ==
        doctest::Approx(objective(data, mask, params) - 5.0).epsilon(1e-12));
}
