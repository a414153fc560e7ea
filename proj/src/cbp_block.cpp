#include "cbpnet/cbp_block.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "cbpnet/errors.hpp"

namespace cbpnet {

void CbpConfig::validate() const {
  if (input_dim == 0 || hidden == 0 || output_dim == 0) {
    throw ConfigError("cbp: dimensions must be positive");
  }
  if (hidden >= input_dim) {
    throw ConfigError("cbp: hidden width " + std::to_string(hidden) +
                      " must be smaller than the input width " + std::to_string(input_dim));
  }
  if (!(eta >= 0.0 && eta < 1.0)) throw ConfigError("cbp: eta must lie in [0, 1)");
  if (!(replacement_rate >= 0.0 && replacement_rate <= 1.0)) {
    throw ConfigError("cbp: replacement rate must lie in [0, 1]");
  }
  if (!(init.gain > 0.0)) throw ConfigError("cbp: init gain must be positive");
}

EfficientCbpBlock::EfficientCbpBlock(CbpConfig cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t d = cfg_.input_dim;
  const std::size_t h = cfg_.hidden;
  const std::size_t o = cfg_.output_dim;
  w_in_ = Tensor({d, h}, true);
  b_in_ = Tensor({h}, true);
  w_unit_ = Tensor({h, h}, true);
  b_unit_ = Tensor({h}, true);
  w_out_ = Tensor({h, o}, true);
  b_out_ = Tensor({o}, true);
  fill_init(w_in_, cfg_.init, rng, d);
  fill_init(w_unit_, cfg_.init, rng, h);
  fill_init(w_out_, cfg_.init, rng, h);
  utility_.assign(h, 0.0);
  age_.assign(h, 0);
  snapshot_.mean_abs_activation.assign(h, 0.0);
  snapshot_.outgoing_weight.assign(h, 0.0);
}

Tensor EfficientCbpBlock::forward_impl(const Tensor& x, CbpCache* cache,
                                       std::ptrdiff_t ablate) const {
  if (x.cols() != cfg_.input_dim) {
    throw ShapeError("cbp forward: expected input width " + std::to_string(cfg_.input_dim) +
                     ", got " + shape_string(x.shape()));
  }
  const Tensor in = x.rank() == 1 ? x.reshaped({1, x.size()}) : x.reshaped({x.rows(), x.cols()});
  const std::size_t batch = in.rows();
  const std::size_t h = cfg_.hidden;

  Tensor pre_in = linear(in, w_in_, b_in_);
  Tensor act_in(pre_in.shape());
  for (std::size_t i = 0; i < pre_in.size(); ++i) act_in[i] = gelu(pre_in[i]);

  Tensor pre_unit({batch, h});
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy(b_unit_.data(), b_unit_.data() + h, pre_unit.data() + b * h);
  }
  gemm_bt(act_in.data(), w_unit_.data(), pre_unit.data(), batch, h, h, true);
  Tensor act_unit(pre_unit.shape());
  for (std::size_t i = 0; i < pre_unit.size(); ++i) act_unit[i] = gelu(pre_unit[i]);
  if (ablate >= 0) {
    for (std::size_t b = 0; b < batch; ++b) act_unit.at(b, static_cast<std::size_t>(ablate)) = 0.0;
  }

  Tensor y = linear(act_unit, w_out_, b_out_);
  if (cache) {
    cache->input = in;
    cache->pre_in = std::move(pre_in);
    cache->act_in = std::move(act_in);
    cache->pre_unit = std::move(pre_unit);
    cache->act_unit = std::move(act_unit);
  }
  if (x.rank() == 1) return y.reshaped({cfg_.output_dim});
  return y;
}

Tensor EfficientCbpBlock::forward(const Tensor& x, bool training, CbpCache* cache) {
  if (!x.all_finite()) throw NumericDomainError("cbp forward: non-finite input");
  if (!training) return forward_impl(x, cache, -1);
  CbpCache local;
  CbpCache& c = cache ? *cache : local;
  Tensor y = forward_impl(x, &c, -1);

  const std::size_t batch = c.act_unit.rows();
  const std::size_t h = cfg_.hidden;
  const std::size_t o = cfg_.output_dim;
  for (std::size_t i = 0; i < h; ++i) {
    double s = 0.0;
    for (std::size_t b = 0; b < batch; ++b) s += std::abs(c.act_unit.at(b, i));
    snapshot_.mean_abs_activation[i] = s / static_cast<double>(batch);
    double w = 0.0;
    const double* row = w_out_.data() + i * o;
    for (std::size_t k = 0; k < o; ++k) {
      w += cfg_.utility == UtilityForm::AbsOfSum ? row[k] : std::abs(row[k]);
    }
    snapshot_.outgoing_weight[i] = w;
  }
  return y;
}

Tensor EfficientCbpBlock::forward_ablated(const Tensor& x, std::size_t unit) const {
  if (unit >= cfg_.hidden) throw IndexError("forward_ablated: unit out of range");
  return forward_impl(x, nullptr, static_cast<std::ptrdiff_t>(unit));
}

Tensor EfficientCbpBlock::backward(const Tensor& dy, const CbpCache& cache) {
  const std::size_t batch = cache.act_unit.rows();
  const std::size_t h = cfg_.hidden;
  if (dy.size() != batch * cfg_.output_dim) {
    throw ShapeError("cbp backward: gradient shape " + shape_string(dy.shape()) +
                     " does not match the cached batch");
  }
  const Tensor g = dy.reshaped({batch, cfg_.output_dim});
  Tensor d_unit = linear_backward(g, cache.act_unit, w_out_, b_out_);
  for (std::size_t i = 0; i < d_unit.size(); ++i) d_unit[i] *= gelu_derivative(cache.pre_unit[i]);

  if (w_unit_.trainable()) {
    gemm_at(d_unit.data(), cache.act_in.data(), w_unit_.grad().data(), batch, h, h, true);
  }
  if (b_unit_.trainable()) {
    auto db = b_unit_.grad();
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < h; ++i) db[i] += d_unit.at(b, i);
    }
  }
  Tensor d_act_in({batch, h});
  gemm(d_unit.data(), w_unit_.data(), d_act_in.data(), batch, h, h, false);
  for (std::size_t i = 0; i < d_act_in.size(); ++i) d_act_in[i] *= gelu_derivative(cache.pre_in[i]);
  Tensor dx = linear_backward(d_act_in, cache.input, w_in_, b_in_);
  if (dy.rank() == 1) return dx.reshaped({cfg_.input_dim});
  return dx;
}

void EfficientCbpBlock::update_utility(const UnitSnapshot& snapshot) {
  const std::size_t h = cfg_.hidden;
  if (snapshot.mean_abs_activation.size() != h || snapshot.outgoing_weight.size() != h) {
    throw ShapeError("update_utility: snapshot does not cover " + std::to_string(h) + " units");
  }
  const double eta = cfg_.eta;
  for (std::size_t i = 0; i < h; ++i) {
    const double contribution =
        std::abs(snapshot.mean_abs_activation[i]) * std::abs(snapshot.outgoing_weight[i]);
    utility_[i] = eta * utility_[i] + (1.0 - eta) * contribution;
    ++age_[i];
  }
}

std::vector<std::size_t> EfficientCbpBlock::cbp_step(Rng& rng, AdamState* optimizer) {
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < cfg_.hidden; ++i) {
    if (age_[i] > cfg_.maturity) eligible.push_back(i);
  }
  accumulator_ += cfg_.replacement_rate * static_cast<double>(eligible.size());
  auto k = static_cast<std::size_t>(std::floor(accumulator_));
  k = std::min(k, eligible.size());
  if (k == 0) return {};
  accumulator_ -= static_cast<double>(k);

  std::stable_sort(eligible.begin(), eligible.end(), [this](std::size_t a, std::size_t b) {
    return utility_[a] < utility_[b];
  });
  eligible.resize(k);
  for (std::size_t i : eligible) reinit_unit(i, rng, optimizer);
  return eligible;
}

void EfficientCbpBlock::reinit_unit(std::size_t i, Rng& rng, AdamState* optimizer) {
  const std::size_t h = cfg_.hidden;
  const std::size_t o = cfg_.output_dim;
  if (i >= h) {
    throw IndexError("reinit_unit: unit " + std::to_string(i) + " out of range (hidden " +
                     std::to_string(h) + ")");
  }
  const auto fresh = sample(cfg_.init, rng, h, h);
  std::copy(fresh.begin(), fresh.end(), w_unit_.data() + i * h);
  b_unit_[i] = 0.0;
  std::fill_n(w_out_.data() + i * o, o, 0.0);
  utility_[i] = 0.0;
  age_[i] = 0;
  ++total_reinit_;
  if (optimizer) {
    optimizer->zero_row(kWeightUnit, i, h);
    optimizer->zero_entry(kBiasUnit, i);
    optimizer->zero_row(kWeightOut, i, o);
  }
}

std::vector<std::pair<std::string, Tensor*>> EfficientCbpBlock::parameters() {
  return {{kWeightIn, &w_in_},   {kBiasIn, &b_in_},   {kWeightUnit, &w_unit_},
          {kBiasUnit, &b_unit_}, {kWeightOut, &w_out_}, {kBiasOut, &b_out_}};
}

std::size_t EfficientCbpBlock::parameter_count() const {
  return w_in_.size() + b_in_.size() + w_unit_.size() + b_unit_.size() + w_out_.size() +
         b_out_.size();
}

std::vector<std::pair<std::string, Tensor>> EfficientCbpBlock::state_tensors() const {
  const std::size_t h = cfg_.hidden;
  std::vector<double> ages(h);
  for (std::size_t i = 0; i < h; ++i) ages[i] = static_cast<double>(age_[i]);
  return {
      {"cbp_state/utility", Tensor({h}, utility_)},
      {"cbp_state/age", Tensor({h}, std::move(ages))},
      {"cbp_state/accumulator", Tensor({1}, std::vector<double>{accumulator_})},
      {"cbp_state/eta", Tensor({1}, std::vector<double>{cfg_.eta})},
      {"cbp_state/maturity", Tensor({1}, std::vector<double>{static_cast<double>(cfg_.maturity)})},
      {"cbp_state/rho", Tensor({1}, std::vector<double>{cfg_.replacement_rate})},
      {"cbp_state/reinitialized", Tensor({1}, std::vector<double>{static_cast<double>(total_reinit_)})},
  };
}

void EfficientCbpBlock::load_state(const std::vector<std::pair<std::string, Tensor>>& state) {
  const std::size_t h = cfg_.hidden;
  auto get = [&](const std::string& name, std::size_t n) -> const Tensor& {
    for (const auto& [k, t] : state) {
      if (k == name) {
        if (t.size() != n) throw ShapeError("cbp state " + name + " has the wrong size");
        return t;
      }
    }
    throw FormatError("cbp state entry " + name + " missing");
  };
  const Tensor& u = get("cbp_state/utility", h);
  const Tensor& a = get("cbp_state/age", h);
  for (std::size_t i = 0; i < h; ++i) {
    utility_[i] = u[i];
    age_[i] = static_cast<std::uint64_t>(a[i]);
  }
  accumulator_ = get("cbp_state/accumulator", 1)[0];
  cfg_.eta = get("cbp_state/eta", 1)[0];
  cfg_.maturity = static_cast<std::uint64_t>(get("cbp_state/maturity", 1)[0]);
  cfg_.replacement_rate = get("cbp_state/rho", 1)[0];
  total_reinit_ = static_cast<std::uint64_t>(get("cbp_state/reinitialized", 1)[0]);
}

}  // namespace cbpnet
