#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cbpnet/backbone.hpp"
#include "cbpnet/cbp_block.hpp"
#include "cbpnet/checkpoint.hpp"
#include "cbpnet/config.hpp"
#include "cbpnet/dataset.hpp"
#include "cbpnet/head.hpp"
#include "cbpnet/optimizer.hpp"
#include "cbpnet/prompt.hpp"
#include "cbpnet/rng.hpp"

namespace cbpnet {

/// Normalized images with labels already mapped to head class indices.
struct TaskData {
  std::size_t task = 0;
  Tensor images;                    // n x H x W x C
  std::vector<std::size_t> labels;  // head class index per sample
  Tensor queries;                   // n x D prompt-free features; empty until computed

  std::size_t size() const noexcept { return labels.size(); }
};

/// Maps each sample's dataset label to class_offset + its position in
/// `classes`. DataError for a label outside `classes`.
TaskData make_task_data(const DatasetContainer& ds, std::span<const std::uint16_t> classes,
                        std::size_t class_offset, std::size_t task);

/// Backbone, prompts, optional CBP block and growing head for one run.
/// Every component draws from its own derived random stream, so enabling
/// the CBP block leaves all other initial values and batch orders unchanged.
class ContinualModel {
 public:
  ContinualModel(const ExperimentConfig& cfg, const Backbone& pretrained);

  const VariantFlags& variant() const noexcept { return variant_; }
  Backbone& backbone() noexcept { return backbone_; }
  const Backbone& backbone() const noexcept { return backbone_; }
  GPrompt& g_prompt() noexcept { return g_prompt_; }
  EPromptPool& pool() noexcept { return pool_; }
  const EPromptPool& pool() const noexcept { return pool_; }
  EfficientCbpBlock* cbp() noexcept { return cbp_.get(); }
  Head& head() noexcept { return head_; }
  const Head& head() const noexcept { return head_; }

  /// Registers a new task's E-Prompt (when prompts are used) and head slice.
  std::size_t begin_task(std::size_t classes);
  std::size_t tasks() const noexcept { return head_.tasks(); }

  /// Prompt-free pooled features of all images, computed in chunks.
  Tensor queries(const Tensor& images) const;

  /// Prompts for `task`; empty when prompts are disabled.
  PromptMap prompts_for(std::size_t task);

  /// Parameters updated while training `task`.
  NamedParams trainable_parameters(std::size_t task);
  /// Every parameter, trainable or not.
  NamedParams all_parameters();
  NamedTensors state();
  std::uint64_t checksum_of(const std::string& prefix);

  Rng& shuffle_rng() noexcept { return shuffle_rng_; }
  Rng& reinit_rng() noexcept { return reinit_rng_; }
  std::uint64_t cbp_steps = 0;

 private:
  VariantFlags variant_;
  Backbone backbone_;
  Rng prompt_rng_;
  Rng head_rng_;
  Rng reinit_rng_;
  Rng shuffle_rng_;
  GPrompt g_prompt_;
  EPromptPool pool_;
  std::unique_ptr<EfficientCbpBlock> cbp_;
  Head head_;
};

struct LossResult {
  double loss = 0.0;
  double classification = 0.0;
  double matching = 0.0;
  Tensor d_logits;
  std::vector<double> d_key;
  std::size_t correct = 0;  // argmax within the mask equals the label
};

/// Masked cross-entropy over `mask` plus lambda times the batch-mean
/// matching loss between each query row and `key`. With no queries the
/// matching term is skipped. DataError for a label outside the mask.
LossResult loss(const Tensor& logits, std::span<const std::size_t> labels, const Tensor* queries,
                std::span<const double> key, double lambda, const ClassRange& mask);

struct TaskTrace {
  std::vector<double> epoch_loss;
  double final_epoch_accuracy = 0.0;
  std::size_t batches = 0;
  std::size_t cbp_steps = 0;
  std::size_t units_reinitialized = 0;
};

/// Trains task `data.task`, which must already be registered. Adam state
/// lives for this call only. NumericDomainError on a non-finite loss.
TaskTrace train_task(ContinualModel& model, TaskData& data, const TrainConfig& cfg);

struct EvalStats {
  std::size_t count = 0;
  std::size_t correct = 0;
  std::size_t selected_correctly = 0;  // key selection picked the true task
};

/// Class-incremental accuracy over every class seen so far. Prompts are
/// chosen by key selection. DataError on an empty test set.
double evaluate(ContinualModel& model, TaskData& data, EvalStats* stats = nullptr);

/// Supervised training of a fresh backbone plus a temporary linear head on
/// the given data (labels 0..classes-1), then freezing. Returns per-epoch losses.
std::vector<double> pretrain_backbone(Backbone& backbone, const TaskData& data, std::size_t classes,
                                      std::size_t epochs, double lr, std::size_t batch, Rng& rng);

/// Rows of `images` selected by `indices`, as a batch tensor.
Tensor gather_rows(const Tensor& images, std::span<const std::size_t> indices);

}  // namespace cbpnet
