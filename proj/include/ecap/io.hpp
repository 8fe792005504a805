#pragma once

// File formats: forecast CSV, model JSON, run configuration JSON.

#include <istream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ecap/estimator.hpp"
#include "ecap/evaluation.hpp"
#include "ecap/simulation.hpp"

namespace ecap::io {

inline constexpr int kModelSchemaVersion = 1;
inline constexpr const char* kLibraryVersion = "1.0.0";

struct ForecastTable {
    std::vector<ForecastRecord> records;
    bool has_outcomes = false;
};

/// Header row required; columns p_tilde, optional z, weight and the group
/// column named by `group_column`. Every malformed row is reported, with its
/// line number, in one ConfigurationError.
ForecastTable read_forecasts(std::istream& in, const std::optional<std::string>& group_column = {});
ForecastTable read_forecasts_file(const std::string& path,
                                  const std::optional<std::string>& group_column = {});

/// Shortest decimal text that reads back to the same double.
std::string format_double(double x);

nlohmann::json config_to_json(const EcapConfig& config);
EcapConfig config_from_json(const nlohmann::json& j);

nlohmann::json model_to_json(const EcapModel& model);
EcapModel model_from_json(const nlohmann::json& j);

nlohmann::json experiment_to_json(const ExperimentSpec& spec);
/// The seed is not part of the file; it comes from the caller.
ExperimentSpec experiment_from_json(const nlohmann::json& j, std::uint64_t seed);

nlohmann::json read_json_file(const std::string& path);

}  // namespace ecap::io
