#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cbpnet/backbone.hpp"
#include "cbpnet/cbp_block.hpp"
#include "json.hpp"

namespace cbpnet {

/// Which components a run trains. The four named presets are the ablation grid.
struct VariantFlags {
  bool use_prompts = true;
  bool use_cbp = true;
  bool freeze_backbone = true;

  static VariantFlags ft_seq() { return {false, false, false}; }
  static VariantFlags ft_seq_cbp() { return {false, true, false}; }
  static VariantFlags dual_prompt() { return {true, false, true}; }
  static VariantFlags cbpnet() { return {true, true, true}; }
  static std::vector<VariantFlags> ablation_grid();

  /// Preset name ("ft-seq", "ft-seq+cbp", "dualprompt", "cbpnet") or a flag string.
  std::string name() const;
  static std::optional<VariantFlags> from_name(const std::string& name);

  bool operator==(const VariantFlags&) const = default;
};

struct TrainConfig {
  std::size_t epochs = 5;
  double lr = 1e-3;
  std::size_t batch = 24;
  double lambda = 0.1;
  std::uint64_t seed = 0;
  VariantFlags variant;

  void validate() const;
};

struct PromptSettings {
  std::size_t g_length = 5;
  std::vector<std::size_t> g_layers{0, 1};
  std::size_t e_length = 5;
  std::vector<std::size_t> e_layers{2, 3, 4};
};

struct CbpSettings {
  double eta = 0.99;
  std::uint64_t maturity = 100;
  double rho = 1e-2;
  std::size_t hidden = 0;      // 0 selects dim / 4
  std::size_t output_dim = 0;  // 0 selects dim
  UtilityForm utility = UtilityForm::AbsOfSum;
  InitSpec init{InitKind::UniformFanIn, 1.0};
};

struct TrainSettings {
  std::size_t epochs = 5;
  double lr = 1e-3;
  std::size_t batch = 24;
  double lambda = 0.1;
  std::size_t pretrain_epochs = 10;
  double pretrain_lr = 1e-3;
};

struct DataSettings {
  std::string container;  // empty: generate a synthetic dataset
  std::size_t classes = 60;
  std::size_t per_class = 50;
  std::size_t base = 10;
  std::size_t tasks = 10;
  double noise = 40.0;
  std::optional<std::uint64_t> seed;  // defaults to the run seed
};

/// Full declarative description of one run.
struct ExperimentConfig {
  std::string name = "experiment";
  BackboneConfig backbone;
  PromptSettings prompts;
  CbpSettings cbp;
  TrainSettings train;
  DataSettings data;
  VariantFlags variant;
  std::uint64_t seed = 0;
  std::size_t num_classes = 0;  // head size for parameter reports; 0: derived from data
  std::string checkpoint_dir;   // empty: no per-task checkpoints

  void validate() const;
  CbpConfig cbp_config() const;
  TrainConfig train_config() const;
  std::uint64_t data_seed() const { return data.seed.value_or(seed); }

  /// Desk-scale defaults.
  static ExperimentConfig tiny();
  /// ViT-B/16-shaped configuration for parameter accounting.
  static ExperimentConfig vit_b16();
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::filesystem::path& path);

std::string utility_form_name(UtilityForm form);
std::string init_kind_name(InitKind kind);

}  // namespace cbpnet
