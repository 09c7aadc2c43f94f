#pragma once

#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "neo/defence.hpp"
#include "neo/metrics.hpp"

// JSON documents written by the command-line tool. Key order is fixed, so equal
// inputs serialize to identical bytes.

namespace neo::report {

struct ReconstructionFiles {
  std::string patch;
  std::vector<std::string> examples;
};

nlohmann::ordered_json config_json(const DefenceConfig& config);

nlohmann::ordered_json defence_report(const DefenceConfig& config, const DefenceResult& result,
                                      const std::optional<ReconstructionFiles>& files);

/// Verdicts back from a defence report (for evaluation).
std::vector<Verdict> verdicts_from_report(const nlohmann::json& report);

nlohmann::ordered_json calibration_report(const CalibrationResult& result, int m, int n, int trials, int samples,
                                          std::uint64_t seed);

nlohmann::ordered_json confusion_json(const metrics::ConfusionCounts& c);
nlohmann::ordered_json mitigation_json(const std::vector<metrics::MitigationRow>& rows);

}  // namespace neo::report
