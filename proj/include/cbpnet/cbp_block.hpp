#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cbpnet/ops.hpp"
#include "cbpnet/optimizer.hpp"
#include "cbpnet/rng.hpp"
#include "cbpnet/tensor.hpp"

namespace cbpnet {

/// How the outgoing weights of a unit enter its contribution utility.
enum class UtilityForm {
  AbsOfSum,  // |sum_k w_ik|
  SumOfAbs,  // sum_k |w_ik|
};

struct CbpConfig {
  std::size_t input_dim = 64;
  std::size_t hidden = 16;
  std::size_t output_dim = 64;
  double eta = 0.99;
  std::uint64_t maturity = 100;
  double replacement_rate = 1e-3;
  UtilityForm utility = UtilityForm::AbsOfSum;
  InitSpec init{InitKind::UniformFanIn, 1.0};

  void validate() const;
};

/// Per-unit statistics of the most recent training batch.
struct UnitSnapshot {
  std::vector<double> mean_abs_activation;  // batch mean of |h_i|
  std::vector<double> outgoing_weight;      // sum_k w_ik, or sum_k |w_ik| for SumOfAbs
};

struct CbpCache {
  Tensor input;
  Tensor pre_in;
  Tensor act_in;
  Tensor pre_unit;
  Tensor act_unit;
};

/// Bottleneck MLP between the pooled feature and the head:
///
///   y = GELU(GELU(x W_in + b_in) W_cbp^T + b_cbp) W_out + b_out
///
/// The tracked units are the H post-GELU outputs of the middle layer. W_cbp
/// is stored unit-major, so row i holds unit i's incoming weights, and row i
/// of W_out holds its outgoing weights.
///
/// Each training step the caller runs forward (which records a snapshot),
/// backward, the optimizer update, update_utility and then cbp_step.
class EfficientCbpBlock {
 public:
  static constexpr const char* kWeightIn = "cbp/w_in";
  static constexpr const char* kBiasIn = "cbp/b_in";
  static constexpr const char* kWeightUnit = "cbp/w_cbp";
  static constexpr const char* kBiasUnit = "cbp/b_cbp";
  static constexpr const char* kWeightOut = "cbp/w_out";
  static constexpr const char* kBiasOut = "cbp/b_out";

  EfficientCbpBlock(CbpConfig cfg, Rng& rng);

  const CbpConfig& config() const noexcept { return cfg_; }
  std::size_t hidden() const noexcept { return cfg_.hidden; }

  /// x is B x D_in (or a single D_in vector). In training mode the batch's
  /// UnitSnapshot is recorded.
  Tensor forward(const Tensor& x, bool training, CbpCache* cache = nullptr);
  /// Forward pass with unit `unit`'s activation forced to zero. Never records.
  Tensor forward_ablated(const Tensor& x, std::size_t unit) const;
  /// Returns dx and accumulates parameter gradients.
  Tensor backward(const Tensor& dy, const CbpCache& cache);

  const UnitSnapshot& last_snapshot() const noexcept { return snapshot_; }

  /// u_i <- eta * u_i + (1 - eta) * |h_i| * |w_i|; a_i <- a_i + 1.
  void update_utility(const UnitSnapshot& snapshot);

  /// Re-initializes the floor-accumulated share of the lowest-utility mature
  /// units and returns their indices in selection order.
  std::vector<std::size_t> cbp_step(Rng& rng, AdamState* optimizer = nullptr);

  /// Resamples unit i's incoming weights, zeroes its input bias, outgoing
  /// weights, utility, age and the matching optimizer moments.
  void reinit_unit(std::size_t i, Rng& rng, AdamState* optimizer = nullptr);

  std::span<const double> utilities() const noexcept { return utility_; }
  std::span<const std::uint64_t> ages() const noexcept { return age_; }
  double accumulator() const noexcept { return accumulator_; }
  std::uint64_t total_reinitialized() const noexcept { return total_reinit_; }

  Tensor& w_in() noexcept { return w_in_; }
  Tensor& b_in() noexcept { return b_in_; }
  Tensor& w_unit() noexcept { return w_unit_; }
  Tensor& b_unit() noexcept { return b_unit_; }
  Tensor& w_out() noexcept { return w_out_; }
  Tensor& b_out() noexcept { return b_out_; }
  const Tensor& w_out() const noexcept { return w_out_; }
  const Tensor& w_unit() const noexcept { return w_unit_; }

  std::vector<std::pair<std::string, Tensor*>> parameters();
  std::size_t parameter_count() const;

  /// Tracking state as named tensors for checkpointing ("cbp_state/*").
  std::vector<std::pair<std::string, Tensor>> state_tensors() const;
  void load_state(const std::vector<std::pair<std::string, Tensor>>& state);

 private:
  Tensor forward_impl(const Tensor& x, CbpCache* cache, std::ptrdiff_t ablate) const;

  CbpConfig cfg_;
  Tensor w_in_, b_in_;
  Tensor w_unit_, b_unit_;
  Tensor w_out_, b_out_;
  std::vector<double> utility_;
  std::vector<std::uint64_t> age_;
  double accumulator_ = 0.0;
  std::uint64_t total_reinit_ = 0;
  UnitSnapshot snapshot_;
};

}  // namespace cbpnet
