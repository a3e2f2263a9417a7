#include "cellgmm/em.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>

#include "cellgmm/constraints.hpp"
#include "cellgmm/gauss.hpp"
#include "cellgmm/stats.hpp"

namespace cellgmm {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<int> reliable_indices(const IntMatrix& w, int i, int skip = -1) {
  std::vector<int> idx;
  idx.reserve(w.cols());
  for (int k = 0; k < w.cols(); ++k) {
    if (k != skip && w(i, k) != 0) idx.push_back(k);
  }
  return idx;
}

double log_normal1(double x, double mean, double var) {
  const double d = x - mean;
  return -0.5 * (kLog2Pi + std::log(var) + d * d / var);
}

// Factorization of one component restricted to a reliable set, with the
// scalar conditional of a fixed column. Shared across all rows whose mask
// rows coincide on the sweep column's complement.
struct ColumnKernel {
  std::vector<int> reliable;
  std::optional<SpdFactor> factor;
  Vector mu_r;
  Vector beta;  // Sigma[R,R]^{-1} Sigma[R,j]
  double mu_j = 0.0;
  double chat = 0.0;

  static ColumnKernel build(const Vector& mu, const Matrix& sigma, int j,
                            std::vector<int> reliable) {
    ColumnKernel k;
    k.reliable = std::move(reliable);
    k.mu_j = mu(j);
    if (k.reliable.empty()) {
      k.chat = sigma(j, j);
      return k;
    }
    k.factor.emplace(submatrix(sigma, k.reliable, k.reliable));
    k.mu_r = subvector(mu, k.reliable);
    Vector cross(k.reliable.size());
    for (std::size_t a = 0; a < k.reliable.size(); ++a) {
      cross(a) = sigma(k.reliable[a], j);
    }
    k.beta = k.factor->solve(cross);
    k.chat = sigma(j, j) - cross.dot(k.beta);
    if (!(k.chat > 0.0)) {
      fail(ErrorCode::SingularSubmatrix,
           "conditional variance collapsed during the mask update");
    }
    return k;
  }

  // ln phi over the reliable set (0 when empty), conditional mean of column
  // j, and the centered reliable sub-vector of the row.
  double base_density(const Matrix& values, int i, Vector& d) const {
    if (!factor) return 0.0;
    d.resize(reliable.size());
    for (std::size_t a = 0; a < reliable.size(); ++a) {
      d(a) = values(i, reliable[a]) - mu_r(a);
    }
    const int r = static_cast<int>(reliable.size());
    return -0.5 * (r * kLog2Pi + factor->log_det() + factor->quad_form(d));
  }

  double cond_mean(const Vector& d) const {
    return factor ? mu_j + beta.dot(d) : mu_j;
  }
};

// E-step kernel for one (pattern, component): density over the reliable set
// plus the block conditional of the unreliable complement.
struct PatternKernel {
  std::vector<int> reliable;
  std::vector<int> unreliable;
  std::optional<SpdFactor> factor;
  Vector mu_r;
  Vector mu_t;
  Matrix gain;      // Sigma[T,R] Sigma[R,R]^{-1}
  Matrix cond_cov;  // Sigma[T,T] - Sigma[T,R] Sigma[R,R]^{-1} Sigma[R,T]

  static PatternKernel build(const Vector& mu, const Matrix& sigma,
                             std::vector<int> reliable,
                             std::vector<int> unreliable) {
    PatternKernel k;
    k.reliable = std::move(reliable);
    k.unreliable = std::move(unreliable);
    k.mu_t = subvector(mu, k.unreliable);
    if (k.reliable.empty()) {
      k.cond_cov = submatrix(sigma, k.unreliable, k.unreliable);
      return k;
    }
    k.factor.emplace(submatrix(sigma, k.reliable, k.reliable));
    k.mu_r = subvector(mu, k.reliable);
    if (!k.unreliable.empty()) {
      const Matrix cross = submatrix(sigma, k.unreliable, k.reliable);
      const Matrix solved = k.factor->solve(cross.transpose());
      k.gain = solved.transpose();
      k.cond_cov = submatrix(sigma, k.unreliable, k.unreliable) - cross * solved;
      k.cond_cov = 0.5 * (k.cond_cov + k.cond_cov.transpose()).eval();
    } else {
      k.cond_cov = Matrix(0, 0);
    }
    return k;
  }

  double base_density(const Matrix& values, int i, Vector& d) const {
    if (!factor) return 0.0;
    d.resize(reliable.size());
    for (std::size_t a = 0; a < reliable.size(); ++a) {
      d(a) = values(i, reliable[a]) - mu_r(a);
    }
    const int r = static_cast<int>(reliable.size());
    return -0.5 * (r * kLog2Pi + factor->log_det() + factor->quad_form(d));
  }

  Vector cond_mean(const Vector& d) const {
    if (unreliable.empty()) return Vector(0);
    if (!factor) return mu_t;
    return mu_t + gain * d;
  }
};

double penalty_sum(const PenaltyMatrix& penalty, const IntMatrix& w) {
  if (penalty.q.size() == 0) return 0.0;
  double s = 0.0;
  for (int i = 0; i < w.rows(); ++i) {
    for (int j = 0; j < w.cols(); ++j) {
      if (w(i, j) == 0) s += penalty.q(i, j);
    }
  }
  return s;
}

}  // namespace

double row_contribution(const Vector& x, const IntVector& w,
                        const MixtureParams& params) {
  const int g = params.g();
  std::vector<double> terms(g);
  for (int k = 0; k < g; ++k) {
    terms[k] = std::log(params.weights(k)) +
               log_density_masked(x, w, params.means[k], params.covariances[k]);
  }
  return log_sum_exp(terms);
}

double delta_unpenalized(const Vector& x, const IntVector& w_tilde, int j,
                         const MixtureParams& params) {
  IntVector w = w_tilde;
  w(j) = 1;
  const double with_j = row_contribution(x, w, params);
  w(j) = 0;
  const double without_j = row_contribution(x, w, params);
  return with_j - without_j;
}

double delta_penalized(const Vector& x, const IntVector& w_tilde, int j,
                       const MixtureParams& params, const Vector& z_row,
                       double q_ij) {
  std::vector<int> reliable;
  for (int k = 0; k < w_tilde.size(); ++k) {
    if (k != j && w_tilde(k) != 0) reliable.push_back(k);
  }
  const std::vector<int> target{j};
  double acc = 0.0;
  for (int g = 0; g < params.g(); ++g) {
    const ConditionalMoments cm = conditional_moments(
        x, reliable, target, params.means[g], params.covariances[g]);
    const double chat = cm.cond_cov(0, 0);
    const double resid = x(j) - cm.cond_mean(0);
    acc += z_row(g) * (std::log(chat) + resid * resid / chat);
  }
  return -0.5 * (acc + kLog2Pi) + q_ij;
}

IntVector update_mask_column(const Vector& deltas, const IntVector& observed_col,
                             int h, bool penalized) {
  const int n = static_cast<int>(deltas.size());
  IntVector col = IntVector::Zero(n);
  std::vector<std::pair<double, int>> order;
  order.reserve(n);
  int nonneg = 0;
  for (int i = 0; i < n; ++i) {
    if (observed_col(i) == 0) continue;
    order.emplace_back(deltas(i), i);
    if (deltas(i) >= 0.0) ++nonneg;
  }
  if (penalized && nonneg > h) {
    for (const auto& [v, i] : order) {
      if (v >= 0.0) col(i) = 1;
    }
    return col;
  }
  // h largest; ties resolved toward the smaller row index by stability.
  std::stable_sort(order.begin(), order.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  const int keep = std::min<int>(h, static_cast<int>(order.size()));
  for (int k = 0; k < keep; ++k) col(order[k].second) = 1;
  return col;
}

CellMask c_step(const DataSet& data, const CellMask& mask,
                const MixtureParams& params, const Matrix& z,
                const PenaltyMatrix& penalty, int h, bool penalized) {
  const int n = data.n();
  const int p = data.p();
  const int g = params.g();
  IntMatrix w = mask.w;

  std::vector<double> log_pi(g);
  for (int k = 0; k < g; ++k) log_pi[k] = std::log(params.weights(k));

  Vector d;
  std::vector<double> with_terms(g), without_terms(g);
  for (int j = 0; j < p; ++j) {
    std::map<std::vector<int>, std::vector<ColumnKernel>> cache;
    Vector deltas = Vector::Constant(n, kNaN);
    for (int i = 0; i < n; ++i) {
      if (data.observed(i, j) == 0) continue;
      std::vector<int> reliable = reliable_indices(w, i, j);
      auto it = cache.find(reliable);
      if (it == cache.end()) {
        std::vector<ColumnKernel> kernels;
        kernels.reserve(g);
        for (int k = 0; k < g; ++k) {
          kernels.push_back(ColumnKernel::build(params.means[k],
                                                params.covariances[k], j,
                                                reliable));
        }
        it = cache.emplace(std::move(reliable), std::move(kernels)).first;
      }
      const double x_ij = data.values(i, j);
      if (penalized) {
        double acc = 0.0;
        for (int k = 0; k < g; ++k) {
          const ColumnKernel& kern = it->second[k];
          kern.base_density(data.values, i, d);
          const double resid = x_ij - kern.cond_mean(d);
          acc += z(i, k) * (std::log(kern.chat) + resid * resid / kern.chat);
        }
        deltas(i) = -0.5 * (acc + kLog2Pi) + penalty.q(i, j);
      } else {
        for (int k = 0; k < g; ++k) {
          const ColumnKernel& kern = it->second[k];
          const double base = kern.base_density(data.values, i, d);
          without_terms[k] = log_pi[k] + base;
          with_terms[k] =
              without_terms[k] + log_normal1(x_ij, kern.cond_mean(d), kern.chat);
        }
        deltas(i) = log_sum_exp(with_terms) - log_sum_exp(without_terms);
      }
    }
    w.col(j) = update_mask_column(deltas, data.observed.col(j), h, penalized);
  }
  return CellMask{std::move(w)};
}

EStepResult e_step(const DataSet& data, const CellMask& mask,
                   const MixtureParams& params) {
  const int n = data.n();
  const int p = data.p();
  const int g = params.g();

  EStepResult out;
  out.z.resize(n, g);
  out.unreliable.resize(n);
  out.completed.assign(g, data.values);
  out.cond_cov.assign(g, std::vector<Matrix>(n));
  out.loglik = 0.0;

  std::vector<double> log_pi(g);
  for (int k = 0; k < g; ++k) log_pi[k] = std::log(params.weights(k));

  std::map<std::vector<int>, std::vector<PatternKernel>> cache;
  Vector d;
  std::vector<double> terms(g);
  for (int i = 0; i < n; ++i) {
    std::vector<int> reliable = reliable_indices(mask.w, i);
    auto it = cache.find(reliable);
    if (it == cache.end()) {
      std::vector<int> unreliable;
      unreliable.reserve(p - reliable.size());
      for (int k = 0, a = 0; k < p; ++k) {
        if (a < static_cast<int>(reliable.size()) && reliable[a] == k) {
          ++a;
        } else {
          unreliable.push_back(k);
        }
      }
      std::vector<PatternKernel> kernels;
      kernels.reserve(g);
      for (int k = 0; k < g; ++k) {
        kernels.push_back(PatternKernel::build(params.means[k],
                                               params.covariances[k], reliable,
                                               unreliable));
      }
      it = cache.emplace(std::move(reliable), std::move(kernels)).first;
    }
    const std::vector<PatternKernel>& kernels = it->second;
    out.unreliable[i] = kernels[0].unreliable;

    double best = -std::numeric_limits<double>::infinity();
    std::vector<Vector> cond_means(g);
    for (int k = 0; k < g; ++k) {
      const double base = kernels[k].base_density(data.values, i, d);
      terms[k] = log_pi[k] + base;
      best = std::max(best, terms[k]);
      cond_means[k] = kernels[k].cond_mean(d);
    }
    double sum = 0.0;
    for (int k = 0; k < g; ++k) sum += std::exp(terms[k] - best);
    const double lse = best + std::log(sum);
    out.loglik += lse;
    for (int k = 0; k < g; ++k) {
      out.z(i, k) = std::exp(terms[k] - lse);
      const auto& t_idx = kernels[k].unreliable;
      for (std::size_t a = 0; a < t_idx.size(); ++a) {
        out.completed[k](i, t_idx[a]) = cond_means[k](a);
      }
      out.cond_cov[k][i] = kernels[k].cond_cov;
    }
  }
  return out;
}

MixtureParams m_step(const DataSet& data, const CellMask& mask,
                     const EStepResult& estep, double c) {
  const int n = data.n();
  const int p = data.p();
  const int g = static_cast<int>(estep.z.cols());

  MixtureParams params;
  params.weights.resize(g);
  params.means.resize(g);
  params.covariances.resize(g);
  std::vector<double> counts(g);

  for (int k = 0; k < g; ++k) {
    const double n_k = estep.z.col(k).sum();
    if (n_k < 1e-10) {
      fail(ErrorCode::EmptyComponent,
           "component " + std::to_string(k) + " collapsed to expected size " +
               std::to_string(n_k));
    }
    counts[k] = n_k;
    params.weights(k) = n_k / static_cast<double>(n);

    Vector mu = Vector::Zero(p);
    for (int i = 0; i < n; ++i) {
      mu += estep.z(i, k) * estep.completed[k].row(i).transpose();
    }
    mu /= n_k;

    Matrix sigma = Matrix::Zero(p, p);
    for (int i = 0; i < n; ++i) {
      const Vector centered = estep.completed[k].row(i).transpose() - mu;
      sigma.noalias() += estep.z(i, k) * centered * centered.transpose();
      const auto& t_idx = estep.unreliable[i];
      const Matrix& cc = estep.cond_cov[k][i];
      for (std::size_t a = 0; a < t_idx.size(); ++a) {
        for (std::size_t b = 0; b < t_idx.size(); ++b) {
          sigma(t_idx[a], t_idx[b]) += estep.z(i, k) * cc(a, b);
        }
      }
    }
    sigma /= n_k;
    params.means[k] = std::move(mu);
    params.covariances[k] = 0.5 * (sigma + sigma.transpose());
  }
  (void)mask;
  return apply_constraint(params, counts, c);
}

PenaltyMatrix compute_penalty(const DataSet& data, const CellMask& mask,
                              const MixtureParams& params, const Matrix& z,
                              double alpha) {
  const int n = data.n();
  const int p = data.p();
  const int g = params.g();
  (void)mask;

  // ln of the conditional variance of each coordinate given all others,
  // i.e. ln(1/(Sigma^{-1})_jj), per component.
  Matrix log_cond_var(g, p);
  for (int k = 0; k < g; ++k) {
    SpdFactor factor(params.covariances[k]);
    const Matrix inv = factor.solve(Matrix::Identity(p, p));
    for (int j = 0; j < p; ++j) log_cond_var(k, j) = -std::log(inv(j, j));
  }
  const double cut = chi_squared_quantile(1.0, 1.0 - alpha);

  PenaltyMatrix penalty;
  penalty.q.resize(n, p);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) {
      double acc = 0.0;
      for (int k = 0; k < g; ++k) acc += z(i, k) * log_cond_var(k, j);
      penalty.q(i, j) = 0.5 * (acc + cut + kLog2Pi);
    }
  }
  return penalty;
}

bool aitken_converged(double l_prev, double l_cur, double l_next,
                      double epsilon) {
  const double denom = l_cur - l_prev;
  if (denom == 0.0) return std::abs(l_next - l_cur) <= 1e-12;
  const double a = (l_next - l_cur) / denom;
  if (a >= 1.0) return false;  // not contracting, no extrapolation claim
  const double gap = (l_next - l_cur) / (1.0 - a);
  return gap < epsilon;
}

double objective(const DataSet& data, const CellMask& mask,
                 const MixtureParams& params) {
  const int g = params.g();
  std::vector<double> log_pi(g);
  for (int k = 0; k < g; ++k) log_pi[k] = std::log(params.weights(k));

  std::map<std::vector<int>, std::vector<PatternKernel>> cache;
  Vector d;
  std::vector<double> terms(g);
  double total = 0.0;
  for (int i = 0; i < data.n(); ++i) {
    std::vector<int> reliable = reliable_indices(mask.w, i);
    auto it = cache.find(reliable);
    if (it == cache.end()) {
      std::vector<PatternKernel> kernels;
      kernels.reserve(g);
      for (int k = 0; k < g; ++k) {
        kernels.push_back(PatternKernel::build(params.means[k],
                                               params.covariances[k], reliable,
                                               {}));
      }
      it = cache.emplace(std::move(reliable), std::move(kernels)).first;
    }
    for (int k = 0; k < g; ++k) {
      terms[k] = log_pi[k] + it->second[k].base_density(data.values, i, d);
    }
    total += log_sum_exp(terms);
  }
  return total;
}

double penalized_objective(const DataSet& data, const CellMask& mask,
                           const MixtureParams& params,
                           const PenaltyMatrix& penalty) {
  return objective(data, mask, params) - penalty_sum(penalty, mask.w);
}

Matrix standardized_residuals(const DataSet& data, const CellMask& mask,
                              const MixtureParams& params, const Matrix& z) {
  const int n = data.n();
  const int p = data.p();
  Matrix res = Matrix::Constant(n, p, kNaN);
  for (int i = 0; i < n; ++i) {
    int map_g = 0;
    z.row(i).maxCoeff(&map_g);
    const Vector x = data.values.row(i).transpose();
    for (int j = 0; j < p; ++j) {
      if (data.observed(i, j) == 0) continue;
      const std::vector<int> reliable = reliable_indices(mask.w, i, j);
      const ConditionalMoments cm =
          conditional_moments(x, reliable, {j}, params.means[map_g],
                              params.covariances[map_g]);
      res(i, j) = (x(j) - cm.cond_mean(0)) / std::sqrt(cm.cond_cov(0, 0));
    }
  }
  return res;
}

Matrix imputed_matrix(const DataSet& data, const CellMask& mask,
                      const EStepResult& estep) {
  const int n = data.n();
  Matrix imputed = data.values;
  for (int i = 0; i < n; ++i) {
    int map_g = 0;
    estep.z.row(i).maxCoeff(&map_g);
    for (int j : estep.unreliable[i]) {
      imputed(i, j) = estep.completed[map_g](i, j);
    }
  }
  (void)mask;
  return imputed;
}

namespace {

struct PhaseRun {
  MixtureParams params;
  CellMask mask;
  EStepResult final_estep;
  std::vector<double> trace;
  bool converged = false;
  int iterations = 0;
};

PhaseRun run_phase(const DataSet& data, const FitConfig& cfg,
                   const Initialization& init, const PenaltyMatrix& penalty,
                   bool penalized, int h) {
  PhaseRun run;
  MixtureParams params = init.params;
  CellMask mask = init.mask;
  EStepResult es = e_step(data, mask, params);

  for (int t = 1; t <= cfg.max_iter; ++t) {
    mask = c_step(data, mask, params, es.z, penalty, h, penalized);
    es = e_step(data, mask, params);
    params = m_step(data, mask, es, cfg.c);
    const double obj = penalized
                           ? penalized_objective(data, mask, params, penalty)
                           : objective(data, mask, params);
    run.trace.push_back(obj);
    run.iterations = t;
    const std::size_t k = run.trace.size();
    if (k >= 3 && aitken_converged(run.trace[k - 3], run.trace[k - 2],
                                   run.trace[k - 1], cfg.epsilon)) {
      run.converged = true;
      break;
    }
  }
  run.params = std::move(params);
  run.mask = std::move(mask);
  run.final_estep = e_step(data, run.mask, run.params);
  return run;
}

FitResult finalize(const DataSet& data, PhaseRun run) {
  FitResult result;
  result.imputed = imputed_matrix(data, run.mask, run.final_estep);
  result.residuals =
      standardized_residuals(data, run.mask, run.params, run.final_estep.z);
  result.params = std::move(run.params);
  result.mask = std::move(run.mask);
  result.posterior = Posterior{std::move(run.final_estep.z)};
  result.objective_trace = std::move(run.trace);
  result.converged = run.converged;
  result.iterations = run.iterations;
  return result;
}

}  // namespace

FitOutputs fit_all(const DataSet& data, const FitConfig& cfg,
                   const InitConfig& init_cfg, const Initialization* first_init) {
  const int h = validate_dataset(data, cfg);
  const int n = data.n();
  const int p = data.p();
  const Rng root(cfg.seed);
  const PenaltyMatrix no_penalty = PenaltyMatrix::zero(n, p);

  struct StartRun {
    Initialization init;
    PhaseRun run;
    double objective;
  };
  std::vector<StartRun> runs;
  const int n_starts = std::max(1, cfg.n_restarts);
  for (int r = 0; r < n_starts; ++r) {
    Initialization init;
    if (r == 0 && first_init != nullptr) {
      init = *first_init;
    } else {
      Rng stream = root.split(0x696E6974ULL + static_cast<std::uint64_t>(r));
      init = make_initialization(data, cfg.g, init_cfg, cfg.c, h, stream);
    }
    try {
      PhaseRun run = run_phase(data, cfg, init, no_penalty, false, h);
      const double obj = run.trace.empty() ? -std::numeric_limits<double>::infinity()
                                           : run.trace.back();
      runs.push_back({std::move(init), std::move(run), obj});
    } catch (const Error& e) {
      if (e.code() != ErrorCode::EmptyComponent) throw;
    }
  }
  if (runs.empty()) {
    fail(ErrorCode::EmptyComponent, "every restart collapsed a component");
  }
  std::stable_sort(runs.begin(), runs.end(),
                   [](const StartRun& a, const StartRun& b) {
                     return a.objective > b.objective;
                   });

  FitOutputs out;
  const StartRun& winner = runs.front();
  if (cfg.penalty_mode == PenaltyMode::automatic) {
    const PenaltyMatrix penalty =
        compute_penalty(data, winner.run.mask, winner.run.params,
                        winner.run.final_estep.z, cfg.alpha_quantile);
    for (const StartRun& start : runs) {
      try {
        PhaseRun run2 = run_phase(data, cfg, start.init, penalty, true, h);
        out.penalized = finalize(data, std::move(run2));
        break;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::EmptyComponent) throw;
      }
    }
    if (!out.penalized.has_value()) {
      fail(ErrorCode::EmptyComponent,
           "penalized phase collapsed from every initialization");
    }
  }
  out.unpenalized = finalize(data, std::move(runs.front().run));
  return out;
}

FitResult fit(const DataSet& data, const FitConfig& cfg,
              const Initialization& init, const InitConfig& init_cfg) {
  FitOutputs out = fit_all(data, cfg, init_cfg, &init);
  if (out.penalized.has_value()) return std::move(*out.penalized);
  return std::move(out.unpenalized);
}

}  // namespace cellgmm
