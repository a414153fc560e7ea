#pragma once

#include <string>
#include <vector>

#include "cbpnet/backbone.hpp"
#include "cbpnet/rng.hpp"
#include "cbpnet/tensor.hpp"

namespace fixture {

inline cbpnet::Tensor random_tensor(cbpnet::Shape shape, cbpnet::Rng& rng, double lo = -1.0,
                                    double hi = 1.0, bool trainable = false) {
  cbpnet::Tensor t(std::move(shape), trainable);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

inline std::vector<double> to_vec(const cbpnet::Tensor& t) {
  return {t.values().begin(), t.values().end()};
}

inline cbpnet::BackboneConfig small_backbone() {
  cbpnet::BackboneConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.channels = 1;
  c.depth = 3;
  c.dim = 8;
  c.heads = 2;
  c.mlp_ratio = 2.0;
  return c;
}

inline cbpnet::Tensor* find_param(cbpnet::Backbone& b, const std::string& name) {
  for (auto& [n, t] : b.parameters())
    if (n == name) return t;
  return nullptr;
}

// sum(w .* y) as a scalar probe of a vector-valued map
inline double weighted_sum(const cbpnet::Tensor& y, const cbpnet::Tensor& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += w[i] * y[i];
  return s;
}

}  // namespace fixture

#include "cbpnet/config.hpp"

namespace fixture {

// A run small enough for unit tests: 8x8 grey images, three encoder layers.
inline cbpnet::ExperimentConfig small_experiment(std::uint64_t seed = 3) {
  cbpnet::ExperimentConfig c;
  c.name = "unit";
  c.seed = seed;
  c.backbone = small_backbone();
  c.prompts.g_length = 2;
  c.prompts.g_layers = {0};
  c.prompts.e_length = 2;
  c.prompts.e_layers = {1, 2};
  c.cbp.maturity = 5;
  c.cbp.rho = 0.05;
  c.train.epochs = 2;
  c.train.batch = 8;
  c.train.lr = 0.01;
  c.train.pretrain_epochs = 1;
  c.data.classes = 20;
  c.data.per_class = 10;
  c.data.base = 4;
  c.data.tasks = 4;
  c.data.noise = 20.0;
  return c;
}

}  // namespace fixture
