#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cellgmm/gauss.hpp"
#include "cellgmm/metrics.hpp"
#include "cellgmm/rng.hpp"

using namespace cellgmm;

namespace {

MixtureParams simple_params(int g, int p, double gap, Rng* rng = nullptr) {
  MixtureParams params;
  params.weights = Vector::Constant(g, 1.0 / g);
  for (int k = 0; k < g; ++k) {
    Vector mu = Vector::Constant(p, k * gap);
    if (rng) {
      for (int j = 0; j < p; ++j) mu(j) += 0.3 * rng->normal();
    }
    params.means.push_back(mu);
    params.covariances.push_back(Matrix::Identity(p, p));
  }
  return params;
}

GroundTruth truth_from(const MixtureParams& params, int n, Rng& rng) {
  GroundTruth truth;
  truth.true_params = params;
  const int p = params.p();
  truth.clean_values.resize(n, p);
  truth.labels.resize(n);
  for (int i = 0; i < n; ++i) {
    const int label = rng.below(params.g());
    truth.labels[i] = label;
    for (int j = 0; j < p; ++j) {
      truth.clean_values(i, j) = params.means[label](j) + rng.normal();
    }
  }
  truth.outlier_mask = IntMatrix::Zero(n, p);
  truth.missing_mask = IntMatrix::Zero(n, p);
  return truth;
}

// Complete-data alignment score written independently of the library.
double perm_score(const MixtureParams& fitted, const GroundTruth& truth,
                  const std::vector<int>& perm) {
  double total = 0.0;
  const int n = static_cast<int>(truth.clean_values.rows());
  const IntVector full = IntVector::Ones(fitted.p());
  for (int i = 0; i < n; ++i) {
    const int k = perm[truth.labels[i]];
    total += std::log(fitted.weights(k)) +
             log_density_masked(truth.clean_values.row(i).transpose(), full,
                                fitted.means[k], fitted.covariances[k]);
  }
  return total;
}

}  // namespace

TEST_CASE("align_labels undoes a component swap") {
  Rng rng(3);
  MixtureParams params = simple_params(2, 3, 10.0);
  GroundTruth truth = truth_from(params, 60, rng);

  MixtureParams swapped = params;
  std::swap(swapped.means[0], swapped.means[1]);
  std::swap(swapped.covariances[0], swapped.covariances[1]);

  CHECK(align_labels(params, truth) == std::vector<int>{0, 1});
  CHECK(align_labels(swapped, truth) == std::vector<int>{1, 0});
}

TEST_CASE("align_labels beats every permutation on random instances") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const int g = 2 + rng.below(3);  // G in 2..4
    const int p = 1 + rng.below(3);
    MixtureParams fitted = simple_params(g, p, 4.0, &rng);
    GroundTruth truth = truth_from(simple_params(g, p, 4.0), 30, rng);
    const std::vector<int> best = align_labels(fitted, truth);
    const double best_score = perm_score(fitted, truth, best);
    std::vector<int> perm(g);
    std::iota(perm.begin(), perm.end(), 0);
    do {
      CHECK(best_score >= perm_score(fitted, truth, perm) - 1e-9);
    } while (std::next_permutation(perm.begin(), perm.end()));
  }
}

TEST_CASE("align_labels rejects very large G") {
  MixtureParams params = simple_params(9, 1, 1.0);
  Rng rng(7);
  GroundTruth truth = truth_from(params, 20, rng);
  try {
    align_labels(params, truth);
    FAIL("expected GTooLarge");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::GTooLarge);
  }
}

TEST_CASE("misclassification rate counts aligned mismatches") {
  std::vector<int> truth(200, 0);
  for (int i = 100; i < 200; ++i) truth[i] = 1;
  std::vector<int> assigned = truth;
  CHECK(misclassification_rate(assigned, truth, {0, 1}) == 0.0);

  // a complement labeling is absorbed by the swap permutation
  std::vector<int> complement(200);
  for (int i = 0; i < 200; ++i) complement[i] = 1 - truth[i];
  CHECK(misclassification_rate(complement, truth, {1, 0}) == 0.0);

  assigned[7] = 1 - assigned[7];
  CHECK(misclassification_rate(assigned, truth, {0, 1}) ==
        doctest::Approx(0.005).epsilon(1e-12));
}

TEST_CASE("adjusted rand index reference points") {
  std::vector<int> a(40), b(40);
  for (int i = 0; i < 40; ++i) {
    a[i] = i % 3;
    b[i] = (i % 3 + 1) % 3;  // renamed labels
  }
  CHECK(adjusted_rand_index(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(adjusted_rand_index(a, b) == doctest::Approx(1.0).epsilon(1e-12));

  // two equal halves against one merged cluster: ARI is exactly zero
  std::vector<int> halves(100), merged(100, 0);
  for (int i = 50; i < 100; ++i) halves[i] = 1;
  CHECK(adjusted_rand_index(halves, merged) == doctest::Approx(0.0).epsilon(1e-12));

  // independent random partitions concentrate near zero
  Rng rng(11);
  std::vector<int> u(1000), v(1000);
  for (int i = 0; i < 1000; ++i) {
    u[i] = rng.below(3);
    v[i] = rng.below(3);
  }
  CHECK(std::abs(adjusted_rand_index(u, v)) < 0.05);

  CHECK(adjusted_rand_index(halves, halves) == 1.0);
}

TEST_CASE("parameter errors vanish at the truth and match closed forms") {
  Rng rng(13);
  MixtureParams params = simple_params(2, 2, 8.0);
  params.weights << 0.3, 0.7;
  GroundTruth truth = truth_from(params, 50, rng);

  Matrix z = Matrix::Zero(50, 2);
  for (int i = 0; i < 50; ++i) z(i, truth.labels[i]) = 1.0;
  const ParameterErrors zero = parameter_errors(params, z, truth, {0, 1});
  CHECK(zero.mse_means.maxCoeff() == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(zero.kl_covs.maxCoeff() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(zero.mse_priors == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(zero.rmse_posterior == doctest::Approx(0.0).epsilon(1e-14));

  // KL(2I : I) in p = 2 is (4 - 2 - ln 4)/2
  MixtureParams inflated = params;
  inflated.covariances[0] = 2.0 * Matrix::Identity(2, 2);
  const ParameterErrors kl = parameter_errors(inflated, z, truth, {0, 1});
  CHECK(kl.kl_covs(0) ==
        doctest::Approx(0.5 * (4.0 - 2.0 - std::log(4.0))).epsilon(1e-12));
  CHECK(kl.kl_covs(0) == doctest::Approx(0.3069).epsilon(1e-3));

  // prior MSE with estimated (0.5, 0.5) against (0.3, 0.7)
  MixtureParams flat = params;
  flat.weights << 0.5, 0.5;
  const ParameterErrors pe = parameter_errors(flat, z, truth, {0, 1});
  CHECK(pe.mse_priors == doctest::Approx(0.04).epsilon(1e-12));
}

TEST_CASE("mask scores") {
  const int n = 10, p = 4;
  GroundTruth truth;
  truth.outlier_mask = IntMatrix::Zero(n, p);
  truth.missing_mask = IntMatrix::Zero(n, p);
  truth.outlier_mask(0, 0) = 1;
  truth.outlier_mask(3, 2) = 1;

  CellMask perfect = CellMask::all_reliable(n, p);
  perfect.w(0, 0) = 0;
  perfect.w(3, 2) = 0;
  const MaskScores exact = mask_scores(perfect, truth);
  REQUIRE(exact.tp_pct.has_value());
  CHECK(*exact.tp_pct == 100.0);
  CHECK(exact.fp_pct == 0.0);

  const MaskScores nothing = mask_scores(CellMask::all_reliable(n, p), truth);
  REQUIRE(nothing.tp_pct.has_value());
  CHECK(*nothing.tp_pct == 0.0);
  CHECK(nothing.fp_pct == 0.0);

  // no contamination: TP undefined
  GroundTruth clean = truth;
  clean.outlier_mask.setZero();
  const MaskScores undef = mask_scores(perfect, clean);
  CHECK_FALSE(undef.tp_pct.has_value());
  CHECK(undef.fp_pct == doctest::Approx(100.0 * 2.0 / 40.0).epsilon(1e-12));

  // adding missing cells outside both masks changes nothing
  GroundTruth with_missing = truth;
  with_missing.missing_mask(9, 3) = 1;
  CellMask masked = perfect;
  masked.w(9, 3) = 0;  // missing cells are never reliable
  const MaskScores same = mask_scores(masked, with_missing);
  CHECK(*same.tp_pct == *exact.tp_pct);
  CHECK(same.fp_pct == exact.fp_pct);
}

TEST_CASE("imputation errors") {
  Matrix clean = Matrix::Zero(200, 5);
  Matrix imputed = clean;
  auto [mae0, rmse0] = imputation_errors(imputed, clean);
  CHECK(mae0 == 0.0);
  CHECK(rmse0 == 0.0);

  imputed(3, 2) = 1.0;
  auto [mae1, rmse1] = imputation_errors(imputed, clean);
  CHECK(mae1 == doctest::Approx(0.001).epsilon(1e-12));
  CHECK(rmse1 == doctest::Approx(std::sqrt(1.0 / 1000.0)).epsilon(1e-12));

  // scope mask restricts the denominator
  IntMatrix scope = IntMatrix::Zero(200, 5);
  scope(3, 2) = 1;
  auto [mae2, rmse2] = imputation_errors(imputed, clean, &scope);
  CHECK(mae2 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rmse2 == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("rowwise trimming mask helper") {
  const IntMatrix w = mask_from_trimmed_rows({0, 1, 0}, 4);
  CHECK(w.row(0).sum() == 4);
  CHECK(w.row(1).sum() == 0);
  CHECK(w.row(2).sum() == 4);
}

TEST_CASE("evaluate is invariant to fitted component relabeling") {
  Rng rng(17);
  MixtureParams params = simple_params(2, 3, 9.0);
  params.weights << 0.4, 0.6;
  GroundTruth truth = truth_from(params, 80, rng);

  FitResult fit;
  fit.params = params;
  fit.mask = CellMask::all_reliable(80, 3);
  fit.posterior.z = Matrix::Zero(80, 2);
  for (int i = 0; i < 80; ++i) fit.posterior.z(i, truth.labels[i]) = 1.0;
  fit.imputed = truth.clean_values;
  const EvalReport a = evaluate(fit, truth);

  FitResult swapped = fit;
  std::swap(swapped.params.means[0], swapped.params.means[1]);
  std::swap(swapped.params.covariances[0], swapped.params.covariances[1]);
  swapped.params.weights << 0.6, 0.4;
  swapped.posterior.z.col(0).swap(swapped.posterior.z.col(1));
  const EvalReport b = evaluate(swapped, truth);

  CHECK(a.mr == b.mr);
  CHECK(a.ari == b.ari);
  CHECK(a.rmse_posterior == doctest::Approx(b.rmse_posterior).epsilon(1e-14));
  CHECK(a.mse_priors == doctest::Approx(b.mse_priors).epsilon(1e-14));
  CHECK((a.mse_means - b.mse_means).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((a.kl_covs - b.kl_covs).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(a.fp_pct == b.fp_pct);
}
