#include "cellgmm/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <thread>
#include <tuple>

#include "cellgmm/csv.hpp"

namespace cellgmm {

ScenarioSpec configure_scenario(ScenarioSpec spec, ContaminationKind kind,
                                double pct_out, double gamma,
                                std::optional<double> missing_rate) {
  spec.contamination.kind = kind;
  spec.contamination_rate = pct_out / 100.0;
  switch (kind) {
    case ContaminationKind::uniform:
      spec.contamination.lo = -10.0;
      spec.contamination.hi = 10.0;
      break;
    case ContaminationKind::extreme:
      spec.contamination.lo = -100.0;
      spec.contamination.hi = 100.0;
      break;
    case ContaminationKind::structural:
      spec.contamination.gamma = gamma;
      if (spec.id == 1 || spec.id == 2) {
        spec.weights = Vector(2);
        spec.weights << 0.7, 0.3;
      }
      break;
    case ContaminationKind::none:
      spec.contamination_rate = 0.0;
      break;
  }
  if (missing_rate.has_value()) spec.missing_rate = *missing_rate;
  return spec;
}

namespace {

void mask_column_stats(const CellMask& mask, int h, BenchRow& row) {
  int min_count = std::numeric_limits<int>::max();
  bool exact = true;
  for (int j = 0; j < mask.p(); ++j) {
    int count = 0;
    for (int i = 0; i < mask.n(); ++i) count += mask.w(i, j);
    min_count = std::min(min_count, count);
    if (count != h) exact = false;
  }
  row.min_col_reliable = min_count;
  row.exact_h_cols = exact;
  row.h = h;
}

}  // namespace

std::vector<BenchRow> run_benchmark(const BenchConfig& cfg) {
  const bool want_pen0 = std::find(cfg.methods.begin(), cfg.methods.end(),
                                   "pen0") != cfg.methods.end();
  const bool want_penb = std::find(cfg.methods.begin(), cfg.methods.end(),
                                   "penb") != cfg.methods.end();
  if (!want_pen0 && !want_penb) {
    fail(ErrorCode::InvalidArgument, "methods must include pen0 and/or penb");
  }

  FitConfig fit_cfg = cfg.fit;
  fit_cfg.g = cfg.scenario.g;
  fit_cfg.penalty_mode = want_penb ? PenaltyMode::automatic : PenaltyMode::none;
  InitConfig init_cfg = cfg.init;
  init_cfg.alpha_true = cfg.scenario.contamination_rate;

  const int rows_per_rep = (want_pen0 ? 1 : 0) + (want_penb ? 1 : 0);
  std::vector<BenchRow> rows(cfg.replicates * rows_per_rep);

  const double pct_out = cfg.scenario.contamination_rate * 100.0;
  const char* kind_name = contamination_kind_name(cfg.scenario.contamination.kind);

  auto run_replicate = [&](int rep) {
    Rng stream = Rng(cfg.seed).split(cfg.stream_tag).split(1000 + rep);
    BenchRow base;
    base.scenario_id = cfg.scenario.id;
    base.pct_out = pct_out;
    base.outlier_kind = kind_name;
    base.replicate = rep;

    auto emit = [&](int slot, const std::string& method, const BenchRow& row) {
      rows[rep * rows_per_rep + slot] = row;
      rows[rep * rows_per_rep + slot].method = method;
    };

    try {
      Rng sim_stream = stream.split(1);
      SimulatedSample sample = simulate(cfg.scenario, sim_stream);
      const int h = required_h(fit_cfg.h_frac, sample.data.n());

      FitConfig rep_fit = fit_cfg;
      rep_fit.seed = stream.split(2).next();
      const auto t0 = std::chrono::steady_clock::now();
      FitOutputs outputs = fit_all(sample.data, rep_fit, init_cfg);
      const double seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
              .count();

      int slot = 0;
      if (want_pen0) {
        BenchRow row = base;
        row.report = evaluate(outputs.unpenalized, sample.truth);
        row.seconds = seconds;
        row.converged = outputs.unpenalized.converged;
        row.objective_trace = outputs.unpenalized.objective_trace;
        mask_column_stats(outputs.unpenalized.mask, h, row);
        emit(slot++, "pen0", row);
      }
      if (want_penb) {
        BenchRow row = base;
        row.report = evaluate(*outputs.penalized, sample.truth);
        row.seconds = seconds;
        row.converged = outputs.penalized->converged;
        row.objective_trace = outputs.penalized->objective_trace;
        mask_column_stats(outputs.penalized->mask, h, row);
        emit(slot++, "penb", row);
      }
    } catch (const Error& e) {
      int slot = 0;
      if (want_pen0) {
        BenchRow row = base;
        row.failed = true;
        row.error = std::string(e.code_name()) + ": " + e.what();
        emit(slot++, "pen0", row);
      }
      if (want_penb) {
        BenchRow row = base;
        row.failed = true;
        row.error = std::string(e.code_name()) + ": " + e.what();
        emit(slot++, "penb", row);
      }
    }
  };

  const int jobs = std::max(1, cfg.jobs);
  if (jobs == 1) {
    for (int rep = 0; rep < cfg.replicates; ++rep) run_replicate(rep);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> workers;
    workers.reserve(jobs);
    for (int w = 0; w < jobs; ++w) {
      workers.emplace_back([&]() {
        while (true) {
          const int rep = next.fetch_add(1);
          if (rep >= cfg.replicates) break;
          run_replicate(rep);
        }
      });
    }
    for (auto& t : workers) t.join();
  }

  std::stable_sort(rows.begin(), rows.end(),
                   [](const BenchRow& a, const BenchRow& b) {
                     if (a.method != b.method) return a.method < b.method;
                     return a.replicate < b.replicate;
                   });
  return rows;
}

namespace {

std::string optional_field(const std::optional<double>& v) {
  return v.has_value() ? format_double(*v) : std::string();
}

}  // namespace

void write_results_csv(const std::string& path, const std::vector<BenchRow>& rows,
                       int g, bool include_seconds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path);
  out << "scenario,pct_out,outlier_kind,method,replicate,mr,ari,tp_pct,fp_pct,mae,rmse";
  for (int k = 1; k <= g; ++k) out << ",mse_mu_" << k;
  for (int k = 1; k <= g; ++k) out << ",kl_sigma_" << k;
  out << ",seconds\n";
  for (const BenchRow& row : rows) {
    out << row.scenario_id << ',' << format_double(row.pct_out) << ','
        << row.outlier_kind << ',' << row.method << ',' << row.replicate << ',';
    if (row.failed) {
      for (int k = 0; k < 6 + 2 * g; ++k) out << ',';
      out << '\n';
      continue;
    }
    out << format_double(row.report.mr) << ',' << format_double(row.report.ari)
        << ',' << optional_field(row.report.tp_pct) << ','
        << format_double(row.report.fp_pct) << ','
        << format_double(row.report.mae_imputation) << ','
        << format_double(row.report.rmse_imputation);
    for (int k = 0; k < g; ++k) out << ',' << format_double(row.report.mse_means(k));
    for (int k = 0; k < g; ++k) out << ',' << format_double(row.report.kl_covs(k));
    out << ',' << (include_seconds ? format_double(row.seconds) : "0") << '\n';
  }
}

void write_summary_csv(const std::string& path, const std::vector<BenchRow>& rows,
                       bool include_seconds) {
  struct Acc {
    int n = 0;
    double mr = 0, ari = 0, fp = 0, mae = 0, rmse = 0, seconds = 0;
    double tp = 0;
    int tp_n = 0;
  };
  std::map<std::tuple<int, double, std::string, std::string>, Acc> groups;
  for (const BenchRow& row : rows) {
    if (row.failed) continue;
    Acc& acc = groups[{row.scenario_id, row.pct_out, row.outlier_kind, row.method}];
    ++acc.n;
    acc.mr += row.report.mr;
    acc.ari += row.report.ari;
    acc.fp += row.report.fp_pct;
    acc.mae += row.report.mae_imputation;
    acc.rmse += row.report.rmse_imputation;
    acc.seconds += row.seconds;
    if (row.report.tp_pct.has_value()) {
      acc.tp += *row.report.tp_pct;
      ++acc.tp_n;
    }
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path);
  out << "scenario,pct_out,outlier_kind,method,n_samples,mr,ari,tp_pct,fp_pct,mae,rmse,seconds\n";
  for (const auto& [key, acc] : groups) {
    const auto& [scenario, pct, kind, method] = key;
    out << scenario << ',' << format_double(pct) << ',' << kind << ',' << method
        << ',' << acc.n << ',' << format_double(acc.mr / acc.n) << ','
        << format_double(acc.ari / acc.n) << ','
        << (acc.tp_n > 0 ? format_double(acc.tp / acc.tp_n) : std::string()) << ','
        << format_double(acc.fp / acc.n) << ',' << format_double(acc.mae / acc.n)
        << ',' << format_double(acc.rmse / acc.n) << ','
        << (include_seconds ? format_double(acc.seconds / acc.n) : "0") << '\n';
  }
}

}  // namespace cellgmm
