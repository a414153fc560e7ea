#include "cbpnet/param_count.hpp"

#include <cstdio>

namespace cbpnet {

std::size_t backbone_parameter_count(const BackboneConfig& cfg) {
  const std::size_t d = cfg.dim;
  const std::size_t m = cfg.mlp_hidden();
  const std::size_t stem = cfg.patch_dim() * d + d + cfg.tokens() * d;
  const std::size_t layer = 2 * d + (d * 3 * d + 3 * d) + (d * d + d) + 2 * d + (d * m + m) + (m * d + d);
  return stem + cfg.depth * layer + 2 * d;
}

ParameterReport count_trainable(const ExperimentConfig& cfg) {
  ParameterReport r;
  const std::size_t d = cfg.backbone.dim;
  const std::size_t classes = cfg.num_classes ? cfg.num_classes : cfg.data.classes;
  r.tasks = cfg.data.tasks;
  r.classes_per_task = r.tasks ? (classes - std::min(classes, cfg.data.base)) / r.tasks : 0;
  r.backbone = backbone_parameter_count(cfg.backbone);
  std::size_t head_in = d;
  if (cfg.variant.use_prompts) {
    r.g_prompt = cfg.prompts.g_layers.size() * 2 * cfg.prompts.g_length * d;
    r.e_prompt_per_task = cfg.prompts.e_layers.size() * 2 * cfg.prompts.e_length * d;
    r.e_prompt_total = r.e_prompt_per_task * r.tasks;
    r.keys = r.tasks * d;
  }
  if (cfg.variant.use_cbp) {
    const CbpConfig c = cfg.cbp_config();
    r.cbp = c.input_dim * c.hidden + c.hidden + c.hidden * c.hidden + c.hidden + c.hidden * c.output_dim +
            c.output_dim;
    head_in = c.output_dim;
  }
  r.head_per_task = r.classes_per_task * (head_in + 1);
  r.head_total = r.head_per_task * r.tasks;
  r.active_per_task = r.g_prompt + r.e_prompt_per_task + r.keys + r.cbp + r.head_per_task;
  if (!cfg.variant.freeze_backbone) r.active_per_task += r.backbone;
  r.active_ratio = static_cast<double>(r.active_per_task) / static_cast<double>(r.backbone);
  return r;
}

nlohmann::json to_json(const ParameterReport& r) {
  return {{"backbone", r.backbone},
          {"g_prompt", r.g_prompt},
          {"e_prompt_per_task", r.e_prompt_per_task},
          {"e_prompt_total", r.e_prompt_total},
          {"keys", r.keys},
          {"cbp", r.cbp},
          {"head_per_task", r.head_per_task},
          {"head_total", r.head_total},
          {"tasks", r.tasks},
          {"classes_per_task", r.classes_per_task},
          {"active_per_task", r.active_per_task},
          {"active_ratio", r.active_ratio}};
}

std::string format_report(const ParameterReport& r) {
  char buf[1024];
  std::snprintf(buf, sizeof buf,
                "backbone                 %12zu\n"
                "g-prompt                 %12zu\n"
                "e-prompt per task        %12zu  (x%zu tasks = %zu)\n"
                "keys                     %12zu\n"
                "cbp block                %12zu\n"
                "head per task            %12zu  (%zu classes, total %zu)\n"
                "active per task          %12zu\n"
                "active / backbone        %11.4f%%\n",
                r.backbone, r.g_prompt, r.e_prompt_per_task, r.tasks, r.e_prompt_total, r.keys, r.cbp,
                r.head_per_task, r.classes_per_task, r.head_total, r.active_per_task, 100.0 * r.active_ratio);
  return buf;
}

}  // namespace cbpnet
