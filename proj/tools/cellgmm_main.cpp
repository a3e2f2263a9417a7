// Command-line driver: fit a model to a CSV, reproduce the synthetic
// benchmarks, or recompute residual diagnostics from a saved fit.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "cellgmm/bench.hpp"
#include "cellgmm/csv.hpp"
#include "cellgmm/em.hpp"
#include "cellgmm/json_io.hpp"
#include "cellgmm/metrics.hpp"
#include "cellgmm/stats.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitValidation = 2;
constexpr int kExitNoConvergence = 3;

void print_error_json(const cellgmm::Error& e) {
  json j;
  j["error"] = e.code_name();
  j["message"] = e.what();
  std::cerr << j.dump() << std::endl;
}

std::uint64_t resolve_seed(std::uint64_t flag_seed) {
  if (const char* env = std::getenv("CELLGMM_SEED")) {
    return std::strtoull(env, nullptr, 10);
  }
  return flag_seed;
}

// FNV-1a, enough to tie outputs to the manifest.
std::string file_checksum(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::uint64_t hash = 1469598103934665603ULL;
  char buf[8192];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      hash ^= static_cast<unsigned char>(buf[i]);
      hash *= 1099511628211ULL;
    }
  }
  char out[17];
  std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(hash));
  return out;
}

void write_manifest(const fs::path& out_dir, const std::string& command,
                    const json& config, std::uint64_t seed,
                    const std::vector<std::string>& inputs,
                    const std::vector<fs::path>& outputs, double wall_seconds) {
  json manifest;
  manifest["command"] = command;
  manifest["config"] = config;
  manifest["seed"] = seed;
  manifest["inputs"] = inputs;
  json files = json::array();
  for (const fs::path& path : outputs) {
    files.push_back({{"path", path.filename().string()},
                     {"checksum", file_checksum(path)}});
  }
  manifest["outputs"] = std::move(files);
  manifest["wall_time_s"] = wall_seconds;
  cellgmm::write_json_file((out_dir / "manifest.json").string(), manifest);
}

struct FitFlags {
  std::string csv_path;
  std::string out_dir = ".";
  int g = 0;
  double h_frac = 0.75;
  double c = 50.0;
  double alpha = 0.01;
  bool penalized = true;
  double alpha_init = 0.03;
  int max_iter = 500;
  double tol = 1e-6;
  std::uint64_t seed = 0;
  int restarts = 5;
  bool allow_nonconverged = false;
};

int cmd_fit(const FitFlags& flags) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::uint64_t seed = resolve_seed(flags.seed);

  cellgmm::CsvTable table = cellgmm::read_dataset_csv(flags.csv_path);
  cellgmm::FitConfig cfg;
  cfg.g = flags.g;
  cfg.h_frac = flags.h_frac;
  cfg.c = flags.c;
  cfg.alpha_quantile = flags.alpha;
  cfg.penalty_mode = flags.penalized ? cellgmm::PenaltyMode::automatic
                                     : cellgmm::PenaltyMode::none;
  cfg.max_iter = flags.max_iter;
  cfg.epsilon = flags.tol;
  cfg.seed = seed;
  cfg.n_restarts = flags.restarts;
  cellgmm::validate_dataset(table.data, cfg);

  cellgmm::InitConfig init_cfg;
  init_cfg.alpha_true = flags.alpha_init;

  cellgmm::FitOutputs outputs = cellgmm::fit_all(table.data, cfg, init_cfg);
  const cellgmm::FitResult& result =
      outputs.penalized.has_value() ? *outputs.penalized : outputs.unpenalized;

  const fs::path out_dir(flags.out_dir);
  fs::create_directories(out_dir);

  cellgmm::write_json_file((out_dir / "params.json").string(),
                           cellgmm::params_to_json(result.params));
  cellgmm::write_int_matrix_csv((out_dir / "mask.csv").string(), result.mask.w,
                                table.header);
  cellgmm::write_matrix_csv((out_dir / "imputed.csv").string(), result.imputed,
                            table.header);
  cellgmm::write_matrix_csv((out_dir / "residuals.csv").string(), result.residuals,
                            table.header, &table.data.observed);

  {
    std::ofstream out(out_dir / "assignments.csv", std::ios::binary);
    out << "row,component";
    for (int k = 1; k <= cfg.g; ++k) out << ",z_" << k;
    out << '\n';
    for (int i = 0; i < result.posterior.z.rows(); ++i) {
      int arg = 0;
      result.posterior.z.row(i).maxCoeff(&arg);
      out << (i + 1) << ',' << (arg + 1);
      for (int k = 0; k < cfg.g; ++k) {
        out << ',' << cellgmm::format_double(result.posterior.z(i, k));
      }
      out << '\n';
    }
  }

  json config;
  config["g"] = cfg.g;
  config["h_frac"] = cfg.h_frac;
  config["c"] = cfg.c;
  config["alpha"] = cfg.alpha_quantile;
  config["penalized"] = flags.penalized;
  config["alpha_init"] = flags.alpha_init;
  config["max_iter"] = cfg.max_iter;
  config["tol"] = cfg.epsilon;
  config["restarts"] = cfg.n_restarts;
  config["converged"] = result.converged;
  config["iterations"] = result.iterations;
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_manifest(out_dir, "fit", config, seed, {flags.csv_path},
                 {out_dir / "params.json", out_dir / "mask.csv",
                  out_dir / "imputed.csv", out_dir / "residuals.csv",
                  out_dir / "assignments.csv"},
                 wall);

  if (!result.converged && !flags.allow_nonconverged) {
    json j;
    j["error"] = "NoConvergence";
    j["message"] = "fit stopped at max_iter before the Aitken criterion";
    std::cerr << j.dump() << std::endl;
    return kExitNoConvergence;
  }
  return 0;
}

struct SimulateFlags {
  int scenario = 0;
  std::string spec_path;
  int replicates = 20;
  double contamination = 5.0;
  std::string outliers = "standard";
  std::optional<double> missing_rate;
  std::vector<std::string> methods = {"pen0", "penb"};
  std::uint64_t seed = 0;
  int jobs = 1;
  std::string out_dir = ".";
  double h_frac = 0.75;
  double c = 50.0;
  double alpha = 0.01;
  int max_iter = 500;
  double tol = 1e-6;
  int restarts = 5;
  bool timings = false;
};

int cmd_simulate(const SimulateFlags& flags) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::uint64_t seed = resolve_seed(flags.seed);

  cellgmm::ScenarioSpec spec;
  if (!flags.spec_path.empty()) {
    spec = cellgmm::scenario_from_json(cellgmm::read_json_file(flags.spec_path));
  } else {
    spec = cellgmm::build_scenario(flags.scenario);
  }

  cellgmm::ContaminationKind kind = cellgmm::ContaminationKind::uniform;
  double gamma = 5.0;
  if (flags.contamination == 0.0) {
    kind = cellgmm::ContaminationKind::none;
  } else if (flags.outliers == "standard") {
    kind = cellgmm::ContaminationKind::uniform;
  } else if (flags.outliers == "extreme") {
    kind = cellgmm::ContaminationKind::extreme;
  } else if (flags.outliers.rfind("structural", 0) == 0) {
    kind = cellgmm::ContaminationKind::structural;
    const auto colon = flags.outliers.find(':');
    if (colon != std::string::npos) {
      gamma = std::stod(flags.outliers.substr(colon + 1));
    }
  } else {
    cellgmm::fail(cellgmm::ErrorCode::InvalidArgument,
                  "--outliers must be standard, extreme, or structural[:gamma]");
  }

  cellgmm::BenchConfig bench;
  bench.scenario = cellgmm::configure_scenario(spec, kind, flags.contamination,
                                               gamma, flags.missing_rate);
  bench.methods = flags.methods;
  bench.replicates = flags.replicates;
  bench.seed = seed;
  bench.jobs = flags.jobs;
  bench.fit.h_frac = flags.h_frac;
  bench.fit.c = flags.c;
  bench.fit.alpha_quantile = flags.alpha;
  bench.fit.max_iter = flags.max_iter;
  bench.fit.epsilon = flags.tol;
  bench.fit.n_restarts = flags.restarts;

  const std::vector<cellgmm::BenchRow> rows = cellgmm::run_benchmark(bench);

  const fs::path out_dir(flags.out_dir);
  fs::create_directories(out_dir);
  cellgmm::write_results_csv((out_dir / "results.csv").string(), rows,
                             bench.scenario.g, flags.timings);
  cellgmm::write_summary_csv((out_dir / "summary.csv").string(), rows,
                             flags.timings);

  int failures = 0;
  for (const auto& row : rows) {
    if (row.failed) ++failures;
  }
  if (failures > 0) {
    std::cerr << failures << " replicate fit(s) failed; their rows carry empty metrics"
              << std::endl;
  }

  json config;
  config["scenario"] = cellgmm::scenario_to_json(bench.scenario);
  config["replicates"] = flags.replicates;
  config["methods"] = flags.methods;
  config["jobs"] = flags.jobs;
  config["h_frac"] = flags.h_frac;
  config["c"] = flags.c;
  config["alpha"] = flags.alpha;
  config["restarts"] = flags.restarts;
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_manifest(out_dir, "simulate", config, seed,
                 flags.spec_path.empty() ? std::vector<std::string>{}
                                         : std::vector<std::string>{flags.spec_path},
                 {out_dir / "results.csv", out_dir / "summary.csv"}, wall);
  return 0;
}

struct ResidualFlags {
  std::string csv_path;
  std::string params_path;
  std::string out_dir = ".";
  double h_frac = 0.75;
};

int cmd_residuals(const ResidualFlags& flags) {
  const auto t0 = std::chrono::steady_clock::now();
  cellgmm::CsvTable table = cellgmm::read_dataset_csv(flags.csv_path);
  const cellgmm::MixtureParams params =
      cellgmm::params_from_json(cellgmm::read_json_file(flags.params_path));
  if (params.p() != table.data.p()) {
    cellgmm::fail(cellgmm::ErrorCode::ShapeMismatch,
                  "params dimension " + std::to_string(params.p()) +
                      " does not match data with p=" +
                      std::to_string(table.data.p()));
  }

  // Residuals are conditional on all other observed cells of the row; the
  // saved mask is not needed for this diagnostic.
  cellgmm::CellMask mask{table.data.observed};
  cellgmm::EStepResult estep = cellgmm::e_step(table.data, mask, params);
  const cellgmm::Matrix residuals =
      cellgmm::standardized_residuals(table.data, mask, params, estep.z);

  const fs::path out_dir(flags.out_dir);
  fs::create_directories(out_dir);
  cellgmm::write_matrix_csv((out_dir / "residuals.csv").string(), residuals,
                            table.header, &table.data.observed);

  const double threshold = std::sqrt(cellgmm::chi_squared_quantile(1.0, 0.99));
  struct Flagged {
    double abs_r;
    int row;
    int col;
    double r;
  };
  std::vector<Flagged> flagged;
  for (int i = 0; i < residuals.rows(); ++i) {
    for (int j = 0; j < residuals.cols(); ++j) {
      if (table.data.observed(i, j) == 0) continue;
      if (std::abs(residuals(i, j)) > threshold) {
        flagged.push_back({std::abs(residuals(i, j)), i, j, residuals(i, j)});
      }
    }
  }
  std::stable_sort(flagged.begin(), flagged.end(),
                   [](const Flagged& a, const Flagged& b) { return a.abs_r > b.abs_r; });
  {
    std::ofstream out(out_dir / "flags.csv", std::ios::binary);
    out << "row,column,variable,residual\n";
    for (const Flagged& f : flagged) {
      out << (f.row + 1) << ',' << (f.col + 1) << ',' << table.header[f.col] << ','
          << cellgmm::format_double(f.r) << '\n';
    }
  }

  json config;
  config["threshold"] = threshold;
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_manifest(out_dir, "residuals", config, 0,
                 {flags.csv_path, flags.params_path},
                 {out_dir / "residuals.csv", out_dir / "flags.csv"}, wall);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cellGMM: Gaussian mixture clustering with cellwise outlier "
               "detection and imputation"};
  app.require_subcommand(1);

  FitFlags fit_flags;
  CLI::App* fit = app.add_subcommand("fit", "Fit the model to a CSV data set");
  fit->add_option("csv", fit_flags.csv_path, "Input CSV with a header row")
      ->required();
  fit->add_option("--g", fit_flags.g, "Number of mixture components")->required();
  fit->add_option("--h-frac", fit_flags.h_frac,
                  "Fraction of rows kept reliable per column");
  fit->add_option("--c", fit_flags.c, "Eigenvalue-ratio bound");
  fit->add_option("--alpha", fit_flags.alpha, "Penalty quantile level");
  fit->add_flag("--penalized,!--no-penalized", fit_flags.penalized,
                "Run the penalized second phase (default on)");
  fit->add_option("--alpha-init", fit_flags.alpha_init,
                  "Assumed contamination level for initialization");
  fit->add_option("--max-iter", fit_flags.max_iter, "Iteration cap per phase");
  fit->add_option("--tol", fit_flags.tol, "Aitken convergence tolerance");
  fit->add_option("--seed", fit_flags.seed, "RNG seed (CELLGMM_SEED overrides)");
  fit->add_option("--restarts", fit_flags.restarts, "Number of initializations");
  fit->add_option("--out", fit_flags.out_dir, "Output directory");
  fit->add_flag("--allow-nonconverged", fit_flags.allow_nonconverged,
                "Exit 0 even when max-iter is reached");

  SimulateFlags sim_flags;
  CLI::App* sim = app.add_subcommand("simulate", "Run synthetic benchmarks");
  sim->add_option("--scenario", sim_flags.scenario, "Canonical scenario id (1-6)");
  sim->add_option("--spec", sim_flags.spec_path, "Custom scenario spec JSON");
  sim->add_option("--replicates", sim_flags.replicates, "Replicates per setting");
  sim->add_option("--contamination", sim_flags.contamination,
                  "Contamination percentage (0, 5, 10, 20)");
  sim->add_option("--outliers", sim_flags.outliers,
                  "standard | extreme | structural[:gamma]");
  sim->add_option("--missing-rate", sim_flags.missing_rate,
                  "Override the scenario's missing-cell rate");
  sim->add_option("--methods", sim_flags.methods, "pen0 and/or penb")
      ->delimiter(',');
  sim->add_option("--seed", sim_flags.seed, "RNG seed (CELLGMM_SEED overrides)");
  sim->add_option("--jobs", sim_flags.jobs, "Worker threads over replicates");
  sim->add_option("--out", sim_flags.out_dir, "Output directory");
  sim->add_option("--h-frac", sim_flags.h_frac, "Fraction kept reliable per column");
  sim->add_option("--c", sim_flags.c, "Eigenvalue-ratio bound");
  sim->add_option("--alpha", sim_flags.alpha, "Penalty quantile level");
  sim->add_option("--max-iter", sim_flags.max_iter, "Iteration cap per phase");
  sim->add_option("--tol", sim_flags.tol, "Aitken convergence tolerance");
  sim->add_option("--restarts", sim_flags.restarts, "Initializations per fit");
  sim->add_flag("--timings", sim_flags.timings,
                "Write measured wall times into results.csv (breaks byte-level "
                "reproducibility across --jobs settings)");

  ResidualFlags res_flags;
  CLI::App* res = app.add_subcommand(
      "residuals", "Standardized cellwise residuals from a saved fit");
  res->add_option("csv", res_flags.csv_path, "Input CSV with a header row")
      ->required();
  res->add_option("params", res_flags.params_path, "params.json from cellgmm fit")
      ->required();
  res->add_option("--out", res_flags.out_dir, "Output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (fit->parsed()) return cmd_fit(fit_flags);
    if (sim->parsed()) return cmd_simulate(sim_flags);
    if (res->parsed()) return cmd_residuals(res_flags);
  } catch (const cellgmm::Error& e) {
    print_error_json(e);
    return kExitValidation;
  } catch (const std::exception& e) {
    json j;
    j["error"] = "Internal";
    j["message"] = e.what();
    std::cerr << j.dump() << std::endl;
    return kExitValidation;
  }
  return kExitUsage;
}
