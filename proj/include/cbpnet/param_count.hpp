#pragma once

#include <cstddef>
#include <string>

#include "cbpnet/config.hpp"
#include "json.hpp"

namespace cbpnet {

/// Parameter accounting derived from a configuration alone.
struct ParameterReport {
  std::size_t backbone = 0;
  std::size_t g_prompt = 0;
  std::size_t e_prompt_per_task = 0;
  std::size_t e_prompt_total = 0;
  std::size_t keys = 0;
  std::size_t cbp = 0;
  std::size_t head_total = 0;
  std::size_t head_per_task = 0;
  std::size_t tasks = 0;
  std::size_t classes_per_task = 0;
  /// G + one E-Prompt + all keys + CBP + one task's head slice, plus the
  /// backbone when it is not frozen.
  std::size_t active_per_task = 0;
  double active_ratio = 0.0;  // active_per_task / backbone
};

std::size_t backbone_parameter_count(const BackboneConfig& cfg);
ParameterReport count_trainable(const ExperimentConfig& cfg);

nlohmann::json to_json(const ParameterReport& report);
std::string format_report(const ParameterReport& report);

}  // namespace cbpnet
