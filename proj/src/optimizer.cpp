#include "cbpnet/optimizer.hpp"

#include <algorithm>
#include <cmath>

#include "cbpnet/errors.hpp"

namespace cbpnet {

void AdamState::reset() {
  steps_ = 0;
  moments_.clear();
}

const Moments* AdamState::find(const std::string& name) const {
  auto it = moments_.find(name);
  return it == moments_.end() ? nullptr : &it->second;
}

void AdamState::zero_row(const std::string& name, std::size_t row, std::size_t cols) {
  auto it = moments_.find(name);
  if (it == moments_.end()) return;
  auto& m = it->second;
  const std::size_t begin = row * cols;
  if (begin + cols > m.first.size()) throw IndexError("zero_row: row out of range for " + name);
  std::fill_n(m.first.begin() + static_cast<std::ptrdiff_t>(begin), cols, 0.0);
  std::fill_n(m.second.begin() + static_cast<std::ptrdiff_t>(begin), cols, 0.0);
}

void AdamState::zero_entry(const std::string& name, std::size_t index) {
  zero_row(name, index, 1);
}

void adam_step(const NamedParams& params, AdamState& state) {
  for (const auto& [name, p] : params) {
    if (!p->trainable()) throw StateError("adam_step: parameter " + name + " is not trainable");
    for (double g : p->grad()) {
      if (!std::isfinite(g)) {
        throw NumericDomainError("adam_step: non-finite gradient for " + name);
      }
    }
  }
  const AdamConfig& c = state.cfg_;
  const auto t = static_cast<double>(++state.steps_);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (const auto& [name, p] : params) {
    Moments& m = state.moments_[name];
    if (m.first.size() != p->size()) {
      m.first.assign(p->size(), 0.0);
      m.second.assign(p->size(), 0.0);
    }
    auto g = p->grad();
    double* w = p->data();
    for (std::size_t i = 0; i < p->size(); ++i) {
      m.first[i] = c.beta1 * m.first[i] + (1.0 - c.beta1) * g[i];
      m.second[i] = c.beta2 * m.second[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double mhat = m.first[i] / correction1;
      const double vhat = m.second[i] / correction2;
      w[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

}  // namespace cbpnet
