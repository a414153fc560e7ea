#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "cbpnet/backbone.hpp"
#include "cbpnet/config.hpp"
#include "cbpnet/dataset.hpp"
#include "cbpnet/report.hpp"
#include "cbpnet/trainer.hpp"

namespace cbpnet {

struct PreparedData {
  ClassIncrementalSplit split;
  TaskData base;  // labels 0..base-1
  std::vector<TaskData> train;
  std::vector<TaskData> test;
  std::vector<std::size_t> class_offsets;  // head offset of each task
  std::optional<std::uint64_t> queries_for;  // backbone checksum the cached queries belong to
};

/// Loads or generates the dataset and splits it class-incrementally.
PreparedData prepare_data(const ExperimentConfig& cfg);

/// Randomly initialized backbone trained on the base classes, then frozen.
/// With no base classes or zero pretraining epochs it is only initialized.
struct PretrainResult {
  Backbone backbone;
  std::vector<double> loss;
};
PretrainResult pretrain(const ExperimentConfig& cfg, const PreparedData& data);

/// Backbone from a checkpoint written by `save_backbone`; returned frozen.
Backbone load_backbone(const BackboneConfig& cfg, const std::filesystem::path& path);
void save_backbone(const Backbone& backbone, const std::filesystem::path& path);

struct RunResult {
  MetricsReport report;
  std::vector<TaskTrace> traces;
  std::vector<std::vector<EvalStats>> evals;  // evals[i][t]
  std::uint64_t initial_checksum = 0;  // pretrained backbone
};

/// Trains tasks in order and fills row i of the accuracy matrix after task i.
RunResult run_sequence(const ExperimentConfig& cfg, PreparedData& data, const Backbone& pretrained);
RunResult run_sequence(const ExperimentConfig& cfg);

/// The four ablation variants on one split and one pretrained backbone.
std::vector<RunResult> ablate(const ExperimentConfig& cfg, PreparedData& data, const Backbone& pretrained);
std::vector<RunResult> ablate(const ExperimentConfig& cfg);

struct ProbeResult {
  RunResult cbp_on;
  RunResult cbp_off;
  std::vector<Curve> curves;  // a[i][i] for each run
};

/// Matched runs differing only in use_cbp on a sequence of at least ten tasks.
ProbeResult plasticity_probe(const ExperimentConfig& cfg, PreparedData& data, const Backbone& pretrained);
ProbeResult plasticity_probe(const ExperimentConfig& cfg);

}  // namespace cbpnet
