#pragma once

// JSON file formats for datasets, generator configs, models, fit reports,
// predictions and metrics. See docs/formats.md.

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wsc/decode.hpp"
#include "wsc/inference.hpp"
#include "wsc/sampler.hpp"
#include "wsc/types.hpp"

namespace wsc::io {

inline constexpr int kFormatVersion = 1;

using nlohmann::json;

/// Test-time posterior over a set of bags, as written by `predict`.
struct Predictions {
  PredictMode mode = PredictMode::with_labels;
  Variant variant = Variant::wsc_siibp;
  std::uint64_t seed = 0;
  std::vector<std::string> ids;
  std::vector<BagState> bags;
};

json to_json(const ConceptSpace& space);
ConceptSpace space_from_json(const json& j, const std::string& where);

json to_json(const Dataset& dataset);
/// Validates the structure and the contents (dimensions, label ranges).
Dataset dataset_from_json(const json& j);

json to_json(const GenConfig& cfg);
/// Missing keys keep their GenConfig defaults.
GenConfig gen_config_from_json(const json& j);

json to_json(const HyperParams& hp);
HyperParams hyperparams_from_json(const json& j, const std::string& where);

json to_json(const TrainedModel& model);
TrainedModel model_from_json(const json& j);

json to_json(const FitReport& report, Variant variant, std::uint64_t seed);

json to_json(const Predictions& p);
Predictions predictions_from_json(const json& j);

json to_json(const MetricsReport& m, double theta_bg);
json to_json(const std::vector<RecallPoint>& sweep);

/// Whole-file helpers. Read errors raise IoError, schema errors ValidationError
/// prefixed with the file path.
json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const json& j);
void write_text(const std::filesystem::path& path, const std::string& text);

Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
GenConfig load_gen_config(const std::filesystem::path& path);
TrainedModel load_model(const std::filesystem::path& path);
void save_model(const TrainedModel& model, const std::filesystem::path& path);
Predictions load_predictions(const std::filesystem::path& path);
void save_predictions(const Predictions& p, const std::filesystem::path& path);

/// Two-column tab-separated table with a header line.
std::string recall_table(const std::vector<RecallPoint>& sweep);
std::string trace_table(const FitReport& report);

}  // namespace wsc::io
