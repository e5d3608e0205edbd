#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "seqtriage/simulation.hpp"

namespace seqtriage {

inline constexpr const char* kReportSchema = "seqtriage-report/1";

// Structured form of a Monte Carlo report; `run_config` is echoed verbatim.
nlohmann::ordered_json report_to_json(const MonteCarloReport& report,
                                      const nlohmann::ordered_json& run_config);

// Writes report.json plus flat tables (parameters.csv, efficiency.csv,
// stage_mse.csv, metrics.csv, replications.csv, estimates_<method>.csv) and
// SVG charts of mean, std and relative efficiency per parameter under
// `dir`/plots. Output is a pure function of the inputs.
void write_report(const MonteCarloReport& report, const nlohmann::ordered_json& run_config,
                  const std::filesystem::path& dir);

nlohmann::ordered_json sim_config_to_json(const SimConfig& config);

}  // namespace seqtriage
