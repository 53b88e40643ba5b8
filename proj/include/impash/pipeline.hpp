#pragma once

#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "impash/config.hpp"
#include "impash/metrics.hpp"

namespace impash {

// A failure inside run_all, tagged with the stage that raised it.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& message)
      : std::runtime_error(stage + ": " + message), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

nlohmann::json metrics_to_json(const MetricsReport& report, const std::vector<std::string>& class_names);
nlohmann::json silhouette_to_json(const SilhouetteReport& report);

struct PredictionRow {
  std::string path;
  int true_label = 0;
  int pred_label = 0;
};

void write_predictions_csv(const std::filesystem::path& path, std::span<const PredictionRow> rows);
std::vector<PredictionRow> read_predictions_csv(const std::filesystem::path& path);

struct RunAllOptions {
  bool verbose = false;
};

struct RunAllResult {
  nlohmann::json report;
  double target_acc = 0.0;
  double baseline_target_acc = 0.0;
  std::filesystem::path report_path;
};

// Synthetic data -> pretraining -> probe on source -> prediction on target ->
// classification and silhouette reports, plus the same probe on the untrained
// encoder. Everything lands under `out_dir`; report.json holds only
// deterministic content and timing.json the wall-clock times.
RunAllResult run_all(const Settings& settings, const std::filesystem::path& out_dir, const RunAllOptions& options = {});

}  // namespace impash
