#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "cbpnet/ops.hpp"
#include "cbpnet/rng.hpp"
#include "cbpnet/tensor.hpp"

namespace cbpnet {

struct ClassRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const noexcept { return end - begin; }
  bool contains(std::size_t c) const noexcept { return c >= begin && c < end; }
};

/// Linear classifier whose class set grows one task slice at a time.
/// Weights are class-major: row c holds class c's weights.
class Head {
 public:
  static constexpr const char* kWeight = "head/w";
  static constexpr const char* kBias = "head/b";

  explicit Head(std::size_t in_dim, InitSpec init = {InitKind::UniformFanIn, 1.0});

  /// Appends `classes` freshly initialized rows; returns the task index.
  std::size_t add_task(std::size_t classes, Rng& rng);

  std::size_t in_dim() const noexcept { return in_dim_; }
  std::size_t classes() const noexcept { return ranges_.empty() ? 0 : ranges_.back().end; }
  std::size_t tasks() const noexcept { return ranges_.size(); }
  const ClassRange& range(std::size_t task) const;
  const std::vector<ClassRange>& ranges() const noexcept { return ranges_; }

  /// x is B x in_dim; returns B x classes().
  Tensor forward(const Tensor& x) const;
  /// Returns dx and accumulates weight and bias gradients.
  Tensor backward(const Tensor& d_logits, const Tensor& x);

  Tensor& weight() noexcept { return weight_; }
  Tensor& bias() noexcept { return bias_; }
  const Tensor& weight() const noexcept { return weight_; }
  const Tensor& bias() const noexcept { return bias_; }

  std::vector<std::pair<std::string, Tensor*>> parameters();

 private:
  std::size_t in_dim_;
  InitSpec init_;
  Tensor weight_;  // classes x in_dim
  Tensor bias_;    // classes
  std::vector<ClassRange> ranges_;
};

}  // namespace cbpnet
