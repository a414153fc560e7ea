#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cbpnet/metrics.hpp"
#include "json.hpp"

namespace cbpnet {

struct Curve {
  std::string label;
  std::vector<double> values;  // one point per task
};

struct MetricsReport {
  std::string variant;
  AccuracyMatrix matrix;
  double avg_accuracy = 0.0;
  std::optional<double> forgetting;  // absent for a single task
  std::vector<double> learning_curve;  // a[i][i]
  std::vector<double> average_curve;   // mean of row i
  std::vector<std::vector<double>> loss_traces;  // per task, per epoch
  std::uint64_t cbp_steps = 0;
  std::uint64_t units_reinitialized = 0;
  std::uint64_t backbone_checksum = 0;
  nlohmann::json config;
  std::uint64_t seed = 0;
  double wall_clock_seconds = 0.0;
};

/// Fills the derived metric fields from `matrix`.
void finalize_metrics(MetricsReport& report);

nlohmann::json to_json(const MetricsReport& report);

/// "after_task,task,accuracy" with one-based task numbers, one row per filled cell.
std::string matrix_csv(const AccuracyMatrix& mx);
/// FormatError on a malformed header or row.
AccuracyMatrix parse_matrix_csv(const std::string& text);
AccuracyMatrix read_matrix_csv(const std::filesystem::path& path);

/// Accuracy-versus-task polylines, one per curve.
std::string curves_svg(const std::vector<Curve>& curves, const std::string& title);

/// Writes metrics.json, matrix.csv and curves.svg into out_dir (created if needed).
/// IoError when the directory cannot be written.
void emit_report(const MetricsReport& report, const std::filesystem::path& out_dir);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace cbpnet
