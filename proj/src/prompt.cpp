#include "cbpnet/prompt.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cbpnet/errors.hpp"

namespace cbpnet {

namespace {

PrefixParams make_prefix(std::size_t length, std::size_t dim, Rng& rng) {
  PrefixParams p{Tensor({length, dim}, true), Tensor({length, dim}, true)};
  fill_uniform(p.key, rng, -kPromptInitBound, kPromptInitBound);
  fill_uniform(p.value, rng, -kPromptInitBound, kPromptInitBound);
  return p;
}

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

GPrompt::GPrompt(std::size_t length, std::size_t dim, std::vector<std::size_t> layers,
                 Rng& rng)
    : length_(length), layers_(std::move(layers)) {
  if (!layers_.empty() && length_ == 0) {
    throw ConfigError("G-Prompt length must be at least 1 when attached to layers");
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) pairs_.push_back(make_prefix(length_, dim, rng));
}

std::vector<std::pair<std::string, Tensor*>> GPrompt::parameters() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::string p = "g_prompt/" + std::to_string(layers_[i]) + "/";
    out.emplace_back(p + "k", &pairs_[i].key);
    out.emplace_back(p + "v", &pairs_[i].value);
  }
  return out;
}

EPromptPool::EPromptPool(std::size_t length, std::size_t dim, std::vector<std::size_t> layers,
                         InitSpec key_init)
    : length_(length), dim_(dim), layers_(std::move(layers)), key_init_(key_init) {
  if (!layers_.empty() && length_ == 0) {
    throw ConfigError("E-Prompt length must be at least 1 when attached to layers");
  }
  if (dim_ == 0) throw ConfigError("E-Prompt pool dimension must be positive");
}

std::size_t EPromptPool::add_task(Rng& rng) {
  TaskPrompt tp;
  for (std::size_t i = 0; i < layers_.size(); ++i) tp.pairs.push_back(make_prefix(length_, dim_, rng));
  tp.key = Tensor({dim_}, true);
  fill_init(tp.key, key_init_, rng, dim_);
  tasks_.push_back(std::move(tp));
  return tasks_.size() - 1;
}

TaskPrompt& EPromptPool::task(std::size_t t) {
  if (t >= tasks_.size()) {
    throw IndexError("E-Prompt pool has no task " + std::to_string(t) + " (size " +
                     std::to_string(tasks_.size()) + ")");
  }
  return tasks_[t];
}

const TaskPrompt& EPromptPool::task(std::size_t t) const {
  return const_cast<EPromptPool*>(this)->task(t);
}

std::vector<std::pair<std::string, Tensor*>> EPromptPool::task_parameters(std::size_t t) {
  TaskPrompt& tp = task(t);
  std::vector<std::pair<std::string, Tensor*>> out;
  const std::string prefix = "e_prompt/" + std::to_string(t) + "/";
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::string p = prefix + std::to_string(layers_[i]) + "/";
    out.emplace_back(p + "k", &tp.pairs[i].key);
    out.emplace_back(p + "v", &tp.pairs[i].value);
  }
  out.emplace_back("e_key/" + std::to_string(t), &tp.key);
  return out;
}

std::vector<std::pair<std::string, Tensor*>> EPromptPool::parameters() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (std::size_t t = 0; t < tasks_.size(); ++t) {
    auto part = task_parameters(t);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

std::size_t select_eprompt(std::span<const double> query, const EPromptPool& pool) {
  if (pool.empty()) throw StateError("select_eprompt: empty prompt pool");
  const double qn = norm(query);
  if (!(qn > 0.0) || !std::isfinite(qn)) {
    throw NumericDomainError("select_eprompt: query vector is zero or non-finite");
  }
  std::size_t best = 0;
  double best_cos = -2.0;
  for (std::size_t t = 0; t < pool.size(); ++t) {
    const auto key = pool.task(t).key.values();
    if (key.size() != query.size()) {
      throw ShapeError("select_eprompt: key and query dimensions differ");
    }
    const double kn = norm(key);
    if (!(kn > 0.0)) {
      throw NumericDomainError("select_eprompt: key of task " + std::to_string(t) + " is zero");
    }
    double d = 0.0;
    for (std::size_t i = 0; i < key.size(); ++i) d += query[i] * key[i];
    const double c = d / (qn * kn);
    if (c > best_cos) {
      best_cos = c;
      best = t;
    }
  }
  return best;
}

double matching_loss(std::span<const double> query, std::span<const double> key,
                     std::span<double> grad_key) {
  if (query.size() != key.size()) throw ShapeError("matching_loss: dimension mismatch");
  const double qn = norm(query);
  const double kn = norm(key);
  if (!(qn > 0.0) || !(kn > 0.0)) {
    throw NumericDomainError("matching_loss: zero query or key vector");
  }
  double d = 0.0;
  for (std::size_t i = 0; i < key.size(); ++i) d += query[i] * key[i];
  const double cosine = std::clamp(d / (qn * kn), -1.0, 1.0);
  if (!grad_key.empty()) {
    if (grad_key.size() != key.size()) throw ShapeError("matching_loss: gradient size mismatch");
    // d(cos)/dk = q/(|q||k|) - cos * k/|k|^2
    for (std::size_t i = 0; i < key.size(); ++i) {
      grad_key[i] = -(query[i] / (qn * kn) - cosine * key[i] / (kn * kn));
    }
  }
  return 1.0 - cosine;
}

PromptMap assemble(GPrompt& g, EPromptPool& pool, std::size_t task) {
  for (std::size_t gl : g.layers()) {
    if (std::find(pool.layers().begin(), pool.layers().end(), gl) != pool.layers().end()) {
      throw ConfigError("G-Prompt and E-Prompt are both attached to layer " + std::to_string(gl));
    }
  }
  PromptMap map;
  for (std::size_t i = 0; i < g.layers().size(); ++i) {
    map[g.layers()[i]] = PromptPair{&g.pairs()[i].key, &g.pairs()[i].value};
  }
  if (pool.layers().empty()) return map;
  TaskPrompt& tp = pool.task(task);
  for (std::size_t i = 0; i < pool.layers().size(); ++i) {
    map[pool.layers()[i]] = PromptPair{&tp.pairs[i].key, &tp.pairs[i].value};
  }
  return map;
}

}  // namespace cbpnet
