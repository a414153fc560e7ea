#include "cbpnet/head.hpp"

#include <algorithm>

#include "cbpnet/errors.hpp"

namespace cbpnet {

Head::Head(std::size_t in_dim, InitSpec init)
    : in_dim_(in_dim), init_(init), weight_({0, in_dim}, true), bias_({0}, true) {
  if (in_dim == 0) throw ConfigError("head: input width must be positive");
}

std::size_t Head::add_task(std::size_t classes, Rng& rng) {
  if (classes == 0) throw ConfigError("head: a task needs at least one class");
  const std::size_t old = this->classes();
  const std::size_t total = old + classes;
  Tensor w({total, in_dim_}, true);
  Tensor b({total}, true);
  std::copy(weight_.data(), weight_.data() + weight_.size(), w.data());
  std::copy(bias_.data(), bias_.data() + bias_.size(), b.data());
  const auto fresh = sample(init_, rng, in_dim_, classes * in_dim_);
  std::copy(fresh.begin(), fresh.end(), w.data() + old * in_dim_);
  weight_ = std::move(w);
  bias_ = std::move(b);
  ranges_.push_back({old, total});
  return ranges_.size() - 1;
}

const ClassRange& Head::range(std::size_t task) const {
  if (task >= ranges_.size()) {
    throw IndexError("head: task " + std::to_string(task) + " not registered");
  }
  return ranges_[task];
}

Tensor Head::forward(const Tensor& x) const {
  if (classes() == 0) throw StateError("head: no classes registered");
  if (x.cols() != in_dim_) {
    throw ShapeError("head: expected input width " + std::to_string(in_dim_) + ", got " +
                     shape_string(x.shape()));
  }
  const std::size_t batch = x.rows();
  const std::size_t c = classes();
  Tensor logits({batch, c});
  for (std::size_t r = 0; r < batch; ++r) std::copy(bias_.data(), bias_.data() + c, logits.data() + r * c);
  gemm_bt(x.data(), weight_.data(), logits.data(), batch, in_dim_, c, true);
  return logits;
}

Tensor Head::backward(const Tensor& d_logits, const Tensor& x) {
  const std::size_t batch = x.rows();
  const std::size_t c = classes();
  require_shape(d_logits, {batch, c}, "head backward");
  if (weight_.trainable()) gemm_at(d_logits.data(), x.data(), weight_.grad().data(), batch, c, in_dim_, true);
  if (bias_.trainable()) {
    auto g = bias_.grad();
    for (std::size_t r = 0; r < batch; ++r) {
      for (std::size_t k = 0; k < c; ++k) g[k] += d_logits.at(r, k);
    }
  }
  Tensor dx({batch, in_dim_});
  gemm(d_logits.data(), weight_.data(), dx.data(), batch, c, in_dim_);
  return dx;
}

std::vector<std::pair<std::string, Tensor*>> Head::parameters() {
  return {{kWeight, &weight_}, {kBias, &bias_}};
}

}  // namespace cbpnet
