#include "cellgmm/init.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cellgmm/constraints.hpp"
#include "cellgmm/gauss.hpp"
#include "cellgmm/stats.hpp"

namespace cellgmm {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kInf = std::numeric_limits<double>::infinity();

// Internal eigenvalue-ratio bound for the initialization's own clustering
// passes; the main fit applies its configured bound afterwards.
constexpr double kInitC = 50.0;

Matrix sample_cov(const Matrix& x, const Vector& mean) {
  const int d = static_cast<int>(x.cols());
  Matrix cov = Matrix::Zero(d, d);
  for (int i = 0; i < x.rows(); ++i) {
    const Vector centered = x.row(i).transpose() - mean;
    cov.noalias() += centered * centered.transpose();
  }
  cov /= static_cast<double>(x.rows());
  return 0.5 * (cov + cov.transpose());
}

struct ComponentDensity {
  SpdFactor factor;
  Vector mean;
  double log_norm;  // -0.5 (d ln 2pi + ln det)
};

std::vector<ComponentDensity> make_densities(const MixtureParams& params) {
  std::vector<ComponentDensity> out;
  out.reserve(params.g());
  const int d = params.p();
  for (int g = 0; g < params.g(); ++g) {
    SpdFactor f(params.covariances[g]);
    const double log_norm = -0.5 * (d * kLog2Pi + f.log_det());
    out.push_back({std::move(f), params.means[g], log_norm});
  }
  return out;
}

}  // namespace

TclustFit mini_tclust(const Matrix& x, int g, double alpha, double c, int starts,
                      int iters, Rng& rng) {
  const int n = static_cast<int>(x.rows());
  const int d = static_cast<int>(x.cols());
  const int seed_size = d + 1;
  if (n < g * seed_size) {
    fail(ErrorCode::TooFewRows, "trimmed clustering needs at least G*(d+1) = " +
                                    std::to_string(g * seed_size) + " rows, got " +
                                    std::to_string(n));
  }
  const int n_trim = static_cast<int>(std::ceil(alpha * n));

  TclustFit best;
  best.objective = -kInf;

  std::vector<double> vals(g);
  for (int s = 0; s < starts; ++s) {
    // Seed each component from d+1 random rows; their sample scatter is
    // generically full rank.
    std::vector<int> seed = rng.sample_without_replacement(n, g * seed_size);
    rng.shuffle(seed);
    MixtureParams params;
    params.weights = Vector::Constant(g, 1.0 / g);
    params.means.resize(g);
    params.covariances.resize(g);
    for (int k = 0; k < g; ++k) {
      Matrix chunk(seed_size, d);
      for (int a = 0; a < seed_size; ++a) {
        chunk.row(a) = x.row(seed[k * seed_size + a]);
      }
      params.means[k] = chunk.colwise().mean().transpose();
      params.covariances[k] = sample_cov(chunk, params.means[k]);
    }
    params = apply_constraint(params, std::vector<double>(g, 1.0), c);

    std::vector<int> assignment(n, -1);
    std::vector<std::uint8_t> trimmed(n, 0);
    double objective = -kInf;
    for (int it = 0; it < iters; ++it) {
      const auto densities = make_densities(params);
      std::vector<double> best_val(n);
      for (int i = 0; i < n; ++i) {
        const Vector xi = x.row(i).transpose();
        int arg = 0;
        double mx = -kInf;
        for (int k = 0; k < g; ++k) {
          const double v = std::log(params.weights(k)) + densities[k].log_norm -
                           0.5 * densities[k].factor.quad_form(xi - densities[k].mean);
          if (v > mx) {
            mx = v;
            arg = k;
          }
        }
        assignment[i] = arg;
        best_val[i] = mx;
      }
      std::vector<int> order(n);
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](int a, int b) { return best_val[a] < best_val[b]; });
      std::fill(trimmed.begin(), trimmed.end(), 0);
      for (int t = 0; t < n_trim; ++t) trimmed[order[t]] = 1;

      std::vector<double> counts(g, 0.0);
      std::vector<Vector> sums(g, Vector::Zero(d));
      int n_keep = 0;
      for (int i = 0; i < n; ++i) {
        if (trimmed[i]) {
          assignment[i] = -1;
          continue;
        }
        ++n_keep;
        counts[assignment[i]] += 1.0;
        sums[assignment[i]] += x.row(i).transpose();
      }
      Vector keep_mean = Vector::Zero(d);
      for (int i = 0; i < n; ++i) {
        if (!trimmed[i]) keep_mean += x.row(i).transpose();
      }
      keep_mean /= std::max(1, n_keep);

      for (int k = 0; k < g; ++k) {
        if (counts[k] < 0.5) {
          // Re-seed a deserted component at a random kept row.
          int pick = -1;
          do {
            pick = rng.below(n);
          } while (trimmed[pick]);
          params.means[k] = x.row(pick).transpose();
          Matrix pooled = Matrix::Zero(d, d);
          for (int i = 0; i < n; ++i) {
            if (trimmed[i]) continue;
            const Vector cen = x.row(i).transpose() - keep_mean;
            pooled.noalias() += cen * cen.transpose();
          }
          params.covariances[k] = pooled / std::max(1, n_keep);
          counts[k] = 1.0;
        } else {
          params.means[k] = sums[k] / counts[k];
          Matrix cov = Matrix::Zero(d, d);
          for (int i = 0; i < n; ++i) {
            if (trimmed[i] || assignment[i] != k) continue;
            const Vector cen = x.row(i).transpose() - params.means[k];
            cov.noalias() += cen * cen.transpose();
          }
          params.covariances[k] = cov / counts[k];
        }
      }
      double total = std::accumulate(counts.begin(), counts.end(), 0.0);
      for (int k = 0; k < g; ++k) params.weights(k) = counts[k] / total;
      params = apply_constraint(params, counts, c);
    }

    // Trimmed classification likelihood of the final state.
    {
      const auto densities = make_densities(params);
      std::vector<double> best_val(n);
      for (int i = 0; i < n; ++i) {
        const Vector xi = x.row(i).transpose();
        int arg = 0;
        double mx = -kInf;
        for (int k = 0; k < g; ++k) {
          const double v = std::log(params.weights(k)) + densities[k].log_norm -
                           0.5 * densities[k].factor.quad_form(xi - densities[k].mean);
          if (v > mx) {
            mx = v;
            arg = k;
          }
        }
        assignment[i] = arg;
        best_val[i] = mx;
      }
      std::vector<int> order(n);
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](int a, int b) { return best_val[a] < best_val[b]; });
      std::fill(trimmed.begin(), trimmed.end(), 0);
      objective = 0.0;
      for (int t = 0; t < n_trim; ++t) {
        trimmed[order[t]] = 1;
        assignment[order[t]] = -1;
      }
      for (int i = 0; i < n; ++i) {
        if (!trimmed[i]) objective += best_val[i];
      }
    }

    if (objective > best.objective) {
      best.params = params;
      best.trimmed = trimmed;
      best.assignment = assignment;
      best.objective = objective;
    }
  }
  return best;
}

namespace {

// Minimum Mahalanobis distance across components.
double min_distance(const Vector& xi, const MixtureParams& params,
                    const std::vector<ComponentDensity>& densities) {
  double mn = kInf;
  for (int k = 0; k < params.g(); ++k) {
    mn = std::min(mn, std::sqrt(densities[k].factor.quad_form(xi - densities[k].mean)));
  }
  return mn;
}

}  // namespace

CellMask init_mask(const DataSet& data, int g, const InitConfig& cfg, int h,
                   Rng& rng) {
  const int n = data.n();
  const int p = data.p();

  // Univariate pass.
  Matrix f1 = Matrix::Constant(n, p, kNaN);
  for (int j = 0; j < p; ++j) {
    std::vector<int> rows;
    for (int i = 0; i < n; ++i) {
      if (data.observed(i, j) != 0) rows.push_back(i);
    }
    Matrix xj(rows.size(), 1);
    for (std::size_t a = 0; a < rows.size(); ++a) xj(a, 0) = data.values(rows[a], j);
    Rng stream = rng.split(1000 + j);
    const TclustFit tc = mini_tclust(xj, g, cfg.alpha_tclust(), kInitC,
                                     cfg.tclust_starts, cfg.tclust_iters, stream);
    const auto densities = make_densities(tc.params);
    for (std::size_t a = 0; a < rows.size(); ++a) {
      f1(rows[a], j) = min_distance(xj.row(a).transpose(), tc.params, densities);
    }
  }
  std::vector<double> f1_vals;
  f1_vals.reserve(n * p);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) {
      if (!std::isnan(f1(i, j))) f1_vals.push_back(f1(i, j));
    }
  }
  const double qq1 = quantile_type7(f1_vals, 1.0 - cfg.alpha1());
  IntMatrix w1 = IntMatrix::Ones(n, p);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) {
      if (!std::isnan(f1(i, j)) && f1(i, j) > qq1) w1(i, j) = 0;
    }
  }

  // Pairwise pass, skipping cells already flagged above.
  Matrix ff2 = Matrix::Constant(n, p, kNaN);
  if (p >= 2) {
    std::vector<std::vector<Vector>> f2(p, std::vector<Vector>(p));
    for (int j1 = 0; j1 < p - 1; ++j1) {
      for (int j2 = j1 + 1; j2 < p; ++j2) {
        std::vector<int> rows;
        for (int i = 0; i < n; ++i) {
          if (data.observed(i, j1) != 0 && data.observed(i, j2) != 0) {
            rows.push_back(i);
          }
        }
        Vector dist = Vector::Constant(n, kNaN);
        if (static_cast<int>(rows.size()) >= g * 3) {
          Matrix xp(rows.size(), 2);
          for (std::size_t a = 0; a < rows.size(); ++a) {
            xp(a, 0) = data.values(rows[a], j1);
            xp(a, 1) = data.values(rows[a], j2);
          }
          Rng stream = rng.split(2000 + j1 * p + j2);
          const TclustFit tc =
              mini_tclust(xp, g, cfg.alpha_tclust(), kInitC, cfg.tclust_starts,
                          cfg.tclust_iters, stream);
          const auto densities = make_densities(tc.params);
          for (std::size_t a = 0; a < rows.size(); ++a) {
            dist(rows[a]) = min_distance(xp.row(a).transpose(), tc.params, densities);
          }
        }
        // Pairs touching a univariately flagged cell are excluded for that unit.
        for (int i = 0; i < n; ++i) {
          if (w1(i, j1) == 0 || w1(i, j2) == 0) dist(i) = kNaN;
        }
        f2[j1][j2] = dist;
      }
    }
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < p; ++j) {
        if (data.observed(i, j) == 0 || w1(i, j) == 0) continue;
        double acc = 0.0;
        bool any = false;
        for (int j2 = 0; j2 < p; ++j2) {
          if (j2 == j) continue;
          const Vector& dist = f2[std::min(j, j2)][std::max(j, j2)];
          if (dist.size() == n && !std::isnan(dist(i))) {
            acc += dist(i);
            any = true;
          }
        }
        if (any) ff2(i, j) = acc;
      }
    }
  }
  IntMatrix w2 = IntMatrix::Ones(n, p);
  if (p >= 2) {
    std::vector<double> ff2_vals;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < p; ++j) {
        if (!std::isnan(ff2(i, j))) ff2_vals.push_back(ff2(i, j));
      }
    }
    if (!ff2_vals.empty()) {
      const double qq2 =
          quantile_type7(ff2_vals, 1.0 - cfg.alpha1() / (1.0 - cfg.alpha2()));
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < p; ++j) {
          if (!std::isnan(ff2(i, j)) && ff2(i, j) > qq2) w2(i, j) = 0;
        }
      }
    }
  }

  IntMatrix w = w1 * w2;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) {
      if (data.observed(i, j) == 0) w(i, j) = 0;
    }
  }

  // Columns over-flagged beyond the cardinality constraint keep only their
  // largest univariate distances flagged.
  for (int j = 0; j < p; ++j) {
    int ones = 0;
    int obs = 0;
    for (int i = 0; i < n; ++i) {
      ones += w(i, j);
      obs += data.observed(i, j);
    }
    if (ones >= h) continue;
    std::vector<std::pair<double, int>> flagged;
    for (int i = 0; i < n; ++i) {
      if (data.observed(i, j) != 0 && w(i, j) == 0) {
        flagged.emplace_back(std::isnan(f1(i, j)) ? 0.0 : f1(i, j), i);
      }
    }
    std::stable_sort(flagged.begin(), flagged.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    const int capacity = std::max(0, obs - h);
    for (std::size_t a = capacity; a < flagged.size(); ++a) {
      w(flagged[a].second, j) = 1;
    }
  }
  return CellMask{std::move(w)};
}

namespace {

// Squared Euclidean distance over shared coordinates, scaled by their count.
double center_distance(const StoredCenter& u, const Vector& center,
                       const std::vector<std::uint8_t>& center_present) {
  double acc = 0.0;
  int shared = 0;
  for (int k = 0; k < center.size(); ++k) {
    if (u.present[k] && center_present[k]) {
      const double d = u.value(k) - center(k);
      acc += d * d;
      ++shared;
    }
  }
  if (shared == 0) return kInf;
  return acc / shared;
}

}  // namespace

CenterKmeans trimmed_center_kmeans(const std::vector<StoredCenter>& centers,
                                   int g, int n_rep, const InitConfig& cfg,
                                   Rng& rng) {
  const int n_centers = static_cast<int>(centers.size());
  const int p = static_cast<int>(centers.front().value.size());
  const int n_trim = static_cast<int>(std::ceil(cfg.alpha_a2() * n_centers));

  CenterKmeans best;
  best.objective = kInf;
  for (int start = 0; start < cfg.n_start; ++start) {
    const int rep0 = rng.below(n_rep);
    std::vector<Vector> nc(g);
    std::vector<std::vector<std::uint8_t>> np(g);
    for (int k = 0; k < g; ++k) {
      nc[k] = centers[rep0 * g + k].value;
      np[k] = centers[rep0 * g + k].present;
    }
    std::vector<int> assign(n_centers, 0);
    std::vector<std::uint8_t> trimmed(n_centers, 0);

    auto assign_and_trim = [&]() {
      std::vector<double> dist(n_centers);
      for (int u = 0; u < n_centers; ++u) {
        double mn = kInf;
        int arg = 0;
        for (int k = 0; k < g; ++k) {
          const double d = center_distance(centers[u], nc[k], np[k]);
          if (d < mn) {
            mn = d;
            arg = k;
          }
        }
        assign[u] = arg;
        dist[u] = mn;
      }
      std::vector<int> order(n_centers);
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](int a, int b) { return dist[a] > dist[b]; });
      std::fill(trimmed.begin(), trimmed.end(), 0);
      for (int t = 0; t < n_trim; ++t) trimmed[order[t]] = 1;
      double obj = 0.0;
      for (int u = 0; u < n_centers; ++u) {
        if (!trimmed[u] && std::isfinite(dist[u])) obj += dist[u];
      }
      return obj;
    };

    for (int it = 0; it < cfg.n_iter; ++it) {
      assign_and_trim();
      for (int k = 0; k < g; ++k) {
        Vector sum = Vector::Zero(p);
        Vector cnt = Vector::Zero(p);
        for (int u = 0; u < n_centers; ++u) {
          if (trimmed[u] || assign[u] != k) continue;
          for (int b = 0; b < p; ++b) {
            if (centers[u].present[b]) {
              sum(b) += centers[u].value(b);
              cnt(b) += 1.0;
            }
          }
        }
        for (int b = 0; b < p; ++b) {
          if (cnt(b) > 0.0) {
            nc[k](b) = sum(b) / cnt(b);
            np[k][b] = 1;
          }
        }
      }
    }
    const double obj = assign_and_trim();
    if (obj < best.objective) {
      best.objective = obj;
      best.centers = nc;
      best.present = np;
      best.assignment = assign;
      for (int u = 0; u < n_centers; ++u) {
        if (trimmed[u]) best.assignment[u] = -1;
      }
    }
  }
  return best;
}

MixtureParams init_params(const DataSet& data, const CellMask& mask0, int g,
                          const InitConfig& cfg, double c, Rng& rng) {
  const int n = data.n();
  const int p = data.p();
  const int q = std::min(cfg.q_vars(p), p);

  // Step 2.1: trimmed clustering on random variable subsets restricted to
  // rows fully reliable over the subset.
  std::vector<StoredCenter> centers;
  centers.reserve(cfg.n_rep * g);
  for (int rep = 0; rep < cfg.n_rep; ++rep) {
    Rng stream = rng.split(3000 + rep);
    bool done = false;
    for (int attempt = 0; attempt < 200 && !done; ++attempt) {
      const std::vector<int> subset = stream.sample_without_replacement(p, q);
      std::vector<int> rows;
      for (int i = 0; i < n; ++i) {
        bool clean = true;
        for (int j : subset) {
          if (mask0.w(i, j) == 0) {
            clean = false;
            break;
          }
        }
        if (clean) rows.push_back(i);
      }
      if (static_cast<int>(rows.size()) < g * (q + 1)) continue;
      Matrix xs(rows.size(), q);
      for (std::size_t a = 0; a < rows.size(); ++a) {
        for (int b = 0; b < q; ++b) xs(a, b) = data.values(rows[a], subset[b]);
      }
      const TclustFit tc = mini_tclust(xs, g, cfg.alpha_a1(), c,
                                       cfg.tclust_starts, cfg.tclust_iters, stream);
      for (int k = 0; k < g; ++k) {
        StoredCenter sc;
        sc.value = Vector::Zero(p);
        sc.present.assign(p, 0);
        for (int b = 0; b < q; ++b) {
          sc.value(subset[b]) = tc.params.means[k](b);
          sc.present[subset[b]] = 1;
        }
        sc.cov = tc.params.covariances[k];
        sc.subset = subset;
        centers.push_back(std::move(sc));
      }
      done = true;
    }
    if (!done) {
      fail(ErrorCode::TooFewCleanRows,
           "no variable subset with enough fully reliable rows");
    }
  }
  const int n_centers = static_cast<int>(centers.size());

  // Step 2.2: trimmed k-means of the stored centers, coordinates matched
  // over shared availability.
  Rng km = rng.split(4000);
  const CenterKmeans grouping = trimmed_center_kmeans(centers, g, cfg.n_rep, cfg, km);
  const std::vector<Vector>& best_centers = grouping.centers;
  const std::vector<std::vector<std::uint8_t>>& best_present = grouping.present;
  const std::vector<int>& best_assign = grouping.assignment;

  // Column statistics over reliable cells back absent coordinates.
  Vector col_mean = Vector::Zero(p);
  Vector col_var = Vector::Ones(p);
  for (int j = 0; j < p; ++j) {
    double s = 0.0, ss = 0.0;
    int m = 0;
    for (int i = 0; i < n; ++i) {
      if (mask0.w(i, j) != 0) {
        s += data.values(i, j);
        ss += data.values(i, j) * data.values(i, j);
        ++m;
      }
    }
    if (m > 0) {
      col_mean(j) = s / m;
      col_var(j) = std::max(ss / m - col_mean(j) * col_mean(j), 1e-8);
    }
  }

  MixtureParams params;
  params.weights = Vector::Zero(g);
  params.means.resize(g);
  params.covariances.resize(g);
  std::vector<double> group_counts(g, 0.0);
  for (int k = 0; k < g; ++k) {
    Vector mu = best_centers[k];
    for (int b = 0; b < p; ++b) {
      if (!best_present[k][b]) mu(b) = col_mean(b);
    }
    params.means[k] = mu;

    Matrix acc = Matrix::Zero(p, p);
    Matrix cnt = Matrix::Zero(p, p);
    for (int u = 0; u < n_centers; ++u) {
      if (best_assign[u] != k) continue;
      group_counts[k] += 1.0;
      const auto& sub = centers[u].subset;
      for (std::size_t a = 0; a < sub.size(); ++a) {
        for (std::size_t b = 0; b < sub.size(); ++b) {
          acc(sub[a], sub[b]) += centers[u].cov(a, b);
          cnt(sub[a], sub[b]) += 1.0;
        }
      }
    }
    Matrix sigma = Matrix::Zero(p, p);
    for (int a = 0; a < p; ++a) {
      for (int b = 0; b < p; ++b) {
        if (cnt(a, b) > 0.0) {
          sigma(a, b) = acc(a, b) / cnt(a, b);
        } else if (a == b) {
          sigma(a, a) = col_var(a);
        }
      }
    }
    params.covariances[k] = 0.5 * (sigma + sigma.transpose());
  }

  // Weights from nearest-center assignment of every row over its reliable
  // coordinates.
  std::vector<double> row_counts(g, 0.0);
  for (int i = 0; i < n; ++i) {
    double mn = kInf;
    int arg = 0;
    for (int k = 0; k < g; ++k) {
      double acc = 0.0;
      int m = 0;
      for (int j = 0; j < p; ++j) {
        if (mask0.w(i, j) != 0) {
          const double d = data.values(i, j) - params.means[k](j);
          acc += d * d;
          ++m;
        }
      }
      const double dist = (m > 0) ? acc / m : kInf;
      if (dist < mn) {
        mn = dist;
        arg = k;
      }
    }
    row_counts[arg] += 1.0;
  }
  double total = 0.0;
  for (int k = 0; k < g; ++k) {
    row_counts[k] = std::max(row_counts[k], 1.0);
    total += row_counts[k];
  }
  for (int k = 0; k < g; ++k) params.weights(k) = row_counts[k] / total;

  std::vector<double> constraint_weights(g);
  for (int k = 0; k < g; ++k) constraint_weights[k] = std::max(group_counts[k], 1.0);
  return apply_constraint(params, constraint_weights, c);
}

Initialization make_initialization(const DataSet& data, int g,
                                   const InitConfig& cfg, double c, int h,
                                   Rng& rng) {
  Initialization init;
  Rng mask_stream = rng.split(1);
  Rng param_stream = rng.split(2);
  init.mask = init_mask(data, g, cfg, h, mask_stream);
  init.params = init_params(data, init.mask, g, cfg, c, param_stream);
  return init;
}

}  // namespace cellgmm
