#include "cellgmm/json_io.hpp"

#include <cmath>
#include <fstream>

namespace cellgmm {

namespace {

nlohmann::json vector_to_json(const Vector& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (int i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

nlohmann::json matrix_to_json(const Matrix& m, bool nan_as_null = false) {
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int j = 0; j < m.cols(); ++j) {
      if (nan_as_null && std::isnan(m(i, j))) {
        row.push_back(nullptr);
      } else {
        row.push_back(m(i, j));
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

nlohmann::json int_matrix_to_json(const IntMatrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Vector vector_from_json(const nlohmann::json& arr) {
  Vector v(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) v(i) = arr[i].get<double>();
  return v;
}

Matrix matrix_from_json(const nlohmann::json& rows) {
  if (rows.empty()) return Matrix(0, 0);
  Matrix m(rows.size(), rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      m(i, j) = rows[i][j].get<double>();
    }
  }
  return m;
}

}  // namespace

nlohmann::json params_to_json(const MixtureParams& params) {
  nlohmann::json j;
  j["g"] = params.g();
  j["weights"] = vector_to_json(params.weights);
  nlohmann::json means = nlohmann::json::array();
  for (const Vector& mu : params.means) means.push_back(vector_to_json(mu));
  j["means"] = std::move(means);
  nlohmann::json covs = nlohmann::json::array();
  for (const Matrix& s : params.covariances) covs.push_back(matrix_to_json(s));
  j["covariances"] = std::move(covs);
  return j;
}

MixtureParams params_from_json(const nlohmann::json& j) {
  MixtureParams params;
  params.weights = vector_from_json(j.at("weights"));
  for (const auto& mu : j.at("means")) params.means.push_back(vector_from_json(mu));
  for (const auto& s : j.at("covariances")) {
    params.covariances.push_back(matrix_from_json(s));
  }
  if (j.contains("g") && j.at("g").get<int>() != params.g()) {
    fail(ErrorCode::ShapeMismatch, "params.json g field disagrees with weights length");
  }
  return params;
}

nlohmann::json fit_result_to_json(const FitResult& result) {
  nlohmann::json j;
  j["params"] = params_to_json(result.params);
  j["mask"] = int_matrix_to_json(result.mask.w);
  j["posterior"] = matrix_to_json(result.posterior.z);
  j["imputed"] = matrix_to_json(result.imputed);
  j["residuals"] = matrix_to_json(result.residuals, /*nan_as_null=*/true);
  j["objective_trace"] = result.objective_trace;
  j["converged"] = result.converged;
  j["iterations"] = result.iterations;
  return j;
}

nlohmann::json scenario_to_json(const ScenarioSpec& spec) {
  nlohmann::json j;
  j["id"] = spec.id;
  j["n"] = spec.n;
  j["p"] = spec.p;
  j["g"] = spec.g;
  j["weights"] = vector_to_json(spec.weights);
  j["cov_family"] = spec.cov_family == CovFamily::ar1 ? "ar1" : "ar1_rotated";
  j["rho"] = spec.rho;
  j["separation"] = spec.separation == Separation::well_separated
                        ? "well_separated"
                        : "close";
  j["contamination"] = {{"kind", contamination_kind_name(spec.contamination.kind)},
                        {"lo", spec.contamination.lo},
                        {"hi", spec.contamination.hi},
                        {"gamma", spec.contamination.gamma}};
  j["contamination_rate"] = spec.contamination_rate;
  j["missing_rate"] = spec.missing_rate;
  return j;
}

ScenarioSpec scenario_from_json(const nlohmann::json& j) {
  ScenarioSpec spec;
  spec.id = j.value("id", 0);
  spec.n = j.at("n").get<int>();
  spec.p = j.at("p").get<int>();
  spec.g = j.at("g").get<int>();
  spec.weights = vector_from_json(j.at("weights"));
  const std::string family = j.value("cov_family", "ar1");
  if (family == "ar1") {
    spec.cov_family = CovFamily::ar1;
  } else if (family == "ar1_rotated") {
    spec.cov_family = CovFamily::ar1_rotated;
  } else {
    fail(ErrorCode::UnknownScenario, "unknown cov_family '" + family + "'");
  }
  spec.rho = j.value("rho", 0.9);
  const std::string sep = j.value("separation", "well_separated");
  if (sep == "well_separated") {
    spec.separation = Separation::well_separated;
  } else if (sep == "close") {
    spec.separation = Separation::close;
  } else {
    fail(ErrorCode::UnknownScenario, "unknown separation '" + sep + "'");
  }
  if (j.contains("contamination")) {
    const auto& c = j.at("contamination");
    const std::string kind = c.value("kind", "none");
    if (kind == "none") {
      spec.contamination.kind = ContaminationKind::none;
    } else if (kind == "standard" || kind == "uniform") {
      spec.contamination.kind = ContaminationKind::uniform;
    } else if (kind == "extreme") {
      spec.contamination.kind = ContaminationKind::extreme;
    } else if (kind == "structural") {
      spec.contamination.kind = ContaminationKind::structural;
    } else {
      fail(ErrorCode::UnknownScenario, "unknown contamination kind '" + kind + "'");
    }
    spec.contamination.lo = c.value("lo", -10.0);
    spec.contamination.hi = c.value("hi", 10.0);
    spec.contamination.gamma = c.value("gamma", 5.0);
  }
  spec.contamination_rate = j.value("contamination_rate", 0.0);
  spec.missing_rate = j.value("missing_rate", 0.0);
  return spec;
}

nlohmann::json ground_truth_to_json(const GroundTruth& truth) {
  nlohmann::json j;
  j["clean_values"] = matrix_to_json(truth.clean_values);
  nlohmann::json labels = nlohmann::json::array();
  for (int label : truth.labels) labels.push_back(label + 1);  // 1-based outside
  j["labels"] = std::move(labels);
  j["true_params"] = params_to_json(truth.true_params);
  j["outlier_mask"] = int_matrix_to_json(truth.outlier_mask);
  j["missing_mask"] = int_matrix_to_json(truth.missing_mask);
  return j;
}

nlohmann::json eval_report_to_json(const EvalReport& report) {
  nlohmann::json j;
  j["mr"] = report.mr;
  j["ari"] = report.ari;
  j["rmse_posterior"] = report.rmse_posterior;
  j["mse_priors"] = report.mse_priors;
  j["mse_means"] = vector_to_json(report.mse_means);
  j["kl_covs"] = vector_to_json(report.kl_covs);
  if (report.tp_pct.has_value()) {
    j["tp_pct"] = *report.tp_pct;
  } else {
    j["tp_pct"] = nullptr;
  }
  j["fp_pct"] = report.fp_pct;
  j["mae_imputation"] = report.mae_imputation;
  j["rmse_imputation"] = report.rmse_imputation;
  nlohmann::json perm = nlohmann::json::array();
  for (int k : report.permutation) perm.push_back(k + 1);
  j["permutation"] = std::move(perm);
  return j;
}

void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path);
  out << j.dump(2) << '\n';
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);
  nlohmann::json j;
  in >> j;
  return j;
}

}  // namespace cellgmm
