#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cbpnet/backbone.hpp"
#include "cbpnet/ops.hpp"
#include "cbpnet/rng.hpp"
#include "cbpnet/tensor.hpp"

namespace cbpnet {

/// Initial prompt values are drawn from U(-kPromptInitBound, kPromptInitBound).
inline constexpr double kPromptInitBound = 0.03;

/// Prefix key/value parameters for one attached layer, each length x dim.
struct PrefixParams {
  Tensor key;
  Tensor value;
};

/// Task-shared prompt attached to the shallow layers.
class GPrompt {
 public:
  GPrompt() = default;
  /// length may be zero only when `layers` is empty.
  GPrompt(std::size_t length, std::size_t dim, std::vector<std::size_t> layers, Rng& rng);

  std::size_t length() const noexcept { return length_; }
  const std::vector<std::size_t>& layers() const noexcept { return layers_; }
  std::vector<PrefixParams>& pairs() noexcept { return pairs_; }
  const std::vector<PrefixParams>& pairs() const noexcept { return pairs_; }

  std::vector<std::pair<std::string, Tensor*>> parameters();

 private:
  std::size_t length_ = 0;
  std::vector<std::size_t> layers_;
  std::vector<PrefixParams> pairs_;
};

struct TaskPrompt {
  std::vector<PrefixParams> pairs;  // one per attached deep layer
  Tensor key;                       // D
};

/// One keyed E-Prompt per task seen so far.
class EPromptPool {
 public:
  EPromptPool() = default;
  EPromptPool(std::size_t length, std::size_t dim, std::vector<std::size_t> layers,
              InitSpec key_init = {InitKind::NormalScaled, 1.0});

  /// Appends a freshly initialized prompt and key; returns its task index.
  std::size_t add_task(Rng& rng);

  std::size_t size() const noexcept { return tasks_.size(); }
  bool empty() const noexcept { return tasks_.empty(); }
  std::size_t length() const noexcept { return length_; }
  std::size_t dim() const noexcept { return dim_; }
  const std::vector<std::size_t>& layers() const noexcept { return layers_; }
  TaskPrompt& task(std::size_t t);
  const TaskPrompt& task(std::size_t t) const;

  /// Parameters of task t only: "e_prompt/<t>/<layer>/{k,v}" and "e_key/<t>".
  std::vector<std::pair<std::string, Tensor*>> task_parameters(std::size_t t);
  std::vector<std::pair<std::string, Tensor*>> parameters();

 private:
  std::size_t length_ = 0;
  std::size_t dim_ = 0;
  std::vector<std::size_t> layers_;
  InitSpec key_init_;
  std::vector<TaskPrompt> tasks_;
};

/// argmax_t cos(q, k_t), ties resolved toward the lowest index.
/// Throws NumericDomainError for a zero query or zero key and StateError for an empty pool.
std::size_t select_eprompt(std::span<const double> query, const EPromptPool& pool);

/// 1 - cos(q, k). When grad_key is non-empty it receives d/dk; q is treated
/// as a constant.
double matching_loss(std::span<const double> query, std::span<const double> key,
                     std::span<double> grad_key = {});

/// G pairs on the G layers plus task `task`'s E pairs on the E layers.
/// Throws ConfigError when the two layer sets overlap, IndexError for an unknown task.
PromptMap assemble(GPrompt& g, EPromptPool& pool, std::size_t task);

}  // namespace cbpnet
