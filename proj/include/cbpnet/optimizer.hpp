#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cbpnet/tensor.hpp"

namespace cbpnet {

using NamedParams = std::vector<std::pair<std::string, Tensor*>>;

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct Moments {
  std::vector<double> first;
  std::vector<double> second;
};

/// Adam moments keyed by parameter name. Moments are created lazily (zeroed)
/// the first time a parameter is stepped.
class AdamState {
 public:
  explicit AdamState(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const noexcept { return cfg_; }
  std::uint64_t steps() const noexcept { return steps_; }

  /// Drops all moments and the step count.
  void reset();

  const Moments* find(const std::string& name) const;

  /// Zeroes both moments for row `row` of a row-major parameter with `cols`
  /// columns. A parameter without moments is left alone.
  void zero_row(const std::string& name, std::size_t row, std::size_t cols);
  void zero_entry(const std::string& name, std::size_t index);

  friend void adam_step(const NamedParams& params, AdamState& state);

 private:
  AdamConfig cfg_;
  std::uint64_t steps_ = 0;
  std::map<std::string, Moments> moments_;
};

/// One bias-corrected Adam update over `params` using their gradient buffers.
/// Throws NumericDomainError (before touching any parameter) if a gradient is non-finite.
void adam_step(const NamedParams& params, AdamState& state);

}  // namespace cbpnet
