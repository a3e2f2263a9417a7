#pragma once

#include <json.hpp>

#include <string>

#include "cellgmm/metrics.hpp"
#include "cellgmm/simlab.hpp"
#include "cellgmm/types.hpp"

namespace cellgmm {

nlohmann::json params_to_json(const MixtureParams& params);
MixtureParams params_from_json(const nlohmann::json& j);

nlohmann::json fit_result_to_json(const FitResult& result);

nlohmann::json scenario_to_json(const ScenarioSpec& spec);
ScenarioSpec scenario_from_json(const nlohmann::json& j);

nlohmann::json ground_truth_to_json(const GroundTruth& truth);

nlohmann::json eval_report_to_json(const EvalReport& report);

void write_json_file(const std::string& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::string& path);

}  // namespace cellgmm
