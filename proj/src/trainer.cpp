#include "cbpnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>

#include "cbpnet/errors.hpp"

namespace cbpnet {

namespace {

constexpr std::size_t kEvalChunk = 128;

void zero_grads(const NamedParams& params) {
  for (const auto& [name, t] : params) t->zero_grad();
}

std::size_t argmax_row(const Tensor& logits, std::size_t r, std::size_t begin, std::size_t end) {
  std::size_t best = begin;
  for (std::size_t c = begin + 1; c < end; ++c) {
    if (logits.at(r, c) > logits.at(r, best)) best = c;
  }
  return best;
}

}  // namespace

Tensor gather_rows(const Tensor& images, std::span<const std::size_t> indices) {
  Shape shape = images.shape();
  if (shape.empty()) throw ShapeError("gather_rows: scalar tensor");
  const std::size_t stride = images.size() / std::max<std::size_t>(1, shape[0]);
  shape[0] = indices.size();
  Tensor out(shape);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= images.dim(0)) throw IndexError("gather_rows: index out of range");
    std::copy_n(images.data() + indices[k] * stride, stride, out.data() + k * stride);
  }
  return out;
}

TaskData make_task_data(const DatasetContainer& ds, std::span<const std::uint16_t> classes,
                        std::size_t class_offset, std::size_t task) {
  std::map<std::uint16_t, std::size_t> position;
  for (std::size_t k = 0; k < classes.size(); ++k) position[classes[k]] = k;
  TaskData data;
  data.task = task;
  data.labels.reserve(ds.count());
  for (std::size_t i = 0; i < ds.count(); ++i) {
    auto it = position.find(ds.labels[i]);
    if (it == position.end()) {
      throw DataError("record " + std::to_string(i) + " has label " + std::to_string(ds.labels[i]) +
                      " which does not belong to task " + std::to_string(task));
    }
    data.labels.push_back(class_offset + it->second);
  }
  data.images = normalize_pixels(ds.pixels, ds.count(), ds.height, ds.width, ds.channels);
  return data;
}

ContinualModel::ContinualModel(const ExperimentConfig& cfg, const Backbone& pretrained)
    : variant_(cfg.variant),
      backbone_(pretrained),
      prompt_rng_(derive_seed(cfg.seed, "model/prompts")),
      head_rng_(derive_seed(cfg.seed, "model/head")),
      reinit_rng_(derive_seed(cfg.seed, "model/cbp-reinit")),
      shuffle_rng_(derive_seed(cfg.seed, "model/shuffle")),
      head_(cfg.variant.use_cbp ? cfg.cbp_config().output_dim : cfg.backbone.dim) {
  backbone_.set_frozen(variant_.freeze_backbone);
  if (variant_.use_prompts) {
    g_prompt_ = GPrompt(cfg.prompts.g_length, cfg.backbone.dim, cfg.prompts.g_layers, prompt_rng_);
    pool_ = EPromptPool(cfg.prompts.e_length, cfg.backbone.dim, cfg.prompts.e_layers);
  }
  if (variant_.use_cbp) {
    Rng init(derive_seed(cfg.seed, "model/cbp-init"));
    cbp_ = std::make_unique<EfficientCbpBlock>(cfg.cbp_config(), init);
  }
}

std::size_t ContinualModel::begin_task(std::size_t classes) {
  const std::size_t t = head_.add_task(classes, head_rng_);
  if (variant_.use_prompts) pool_.add_task(prompt_rng_);
  return t;
}

Tensor ContinualModel::queries(const Tensor& images) const {
  const std::size_t n = images.dim(0);
  Tensor out({n, backbone_.config().dim});
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += kEvalChunk) {
    const std::size_t end = std::min(n, start + kEvalChunk);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    Tensor q = backbone_.query(gather_rows(images, idx));
    std::copy_n(q.data(), q.size(), out.data() + start * out.cols());
  }
  return out;
}

PromptMap ContinualModel::prompts_for(std::size_t task) {
  if (!variant_.use_prompts) return {};
  return assemble(g_prompt_, pool_, task);
}

NamedParams ContinualModel::trainable_parameters(std::size_t task) {
  NamedParams out;
  if (!variant_.freeze_backbone) {
    for (auto& p : backbone_.parameters()) out.push_back(p);
  }
  if (variant_.use_prompts) {
    for (auto& p : g_prompt_.parameters()) out.push_back(p);
    for (auto& p : pool_.task_parameters(task)) out.push_back(p);
  }
  if (cbp_) {
    for (auto& p : cbp_->parameters()) out.push_back(p);
  }
  for (auto& p : head_.parameters()) out.push_back(p);
  return out;
}

NamedParams ContinualModel::all_parameters() {
  NamedParams out = backbone_.parameters();
  if (variant_.use_prompts) {
    for (auto& p : g_prompt_.parameters()) out.push_back(p);
    for (auto& p : pool_.parameters()) out.push_back(p);
  }
  if (cbp_) {
    for (auto& p : cbp_->parameters()) out.push_back(p);
  }
  for (auto& p : head_.parameters()) out.push_back(p);
  return out;
}

NamedTensors ContinualModel::state() {
  NamedTensors out = snapshot(all_parameters());
  if (cbp_) {
    for (auto& s : cbp_->state_tensors()) out.push_back(std::move(s));
  }
  return out;
}

std::uint64_t ContinualModel::checksum_of(const std::string& prefix) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, t] : all_parameters()) {
    if (name.compare(0, prefix.size(), prefix) == 0) h = checksum(*t, h);
  }
  return h;
}

LossResult loss(const Tensor& logits, std::span<const std::size_t> labels, const Tensor* queries,
                std::span<const double> key, double lambda, const ClassRange& mask) {
  const std::size_t batch = logits.rows();
  const std::size_t classes = logits.cols();
  if (labels.size() != batch) throw ShapeError("loss: label count does not match the logits");
  if (mask.end > classes || mask.size() == 0) throw ShapeError("loss: class mask outside the logits");
  if (!(lambda >= 0.0)) throw ConfigError("loss: lambda must be non-negative");

  LossResult r;
  r.d_logits = Tensor({batch, classes});
  const double inv_b = 1.0 / static_cast<double>(batch);
  double ce = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t y = labels[b];
    if (!mask.contains(y)) {
      throw DataError("loss: label " + std::to_string(y) + " of sample " + std::to_string(b) +
                      " lies outside the task's classes [" + std::to_string(mask.begin) + ", " +
                      std::to_string(mask.end) + ")");
    }
    const std::size_t best = argmax_row(logits, b, mask.begin, mask.end);
    const double mx = logits.at(b, best);
    double sum = 0.0;
    for (std::size_t c = mask.begin; c < mask.end; ++c) sum += std::exp(logits.at(b, c) - mx);
    const double log_z = mx + std::log(sum);
    ce -= logits.at(b, y) - log_z;
    for (std::size_t c = mask.begin; c < mask.end; ++c) {
      r.d_logits.at(b, c) = std::exp(logits.at(b, c) - log_z) * inv_b;
    }
    r.d_logits.at(b, y) -= inv_b;
    if (best == y) ++r.correct;
  }
  r.classification = ce * inv_b;

  if (queries) {
    if (queries->rows() != batch || queries->cols() != key.size()) {
      throw ShapeError("loss: queries must be batch x key width");
    }
    r.d_key.assign(key.size(), 0.0);
    std::vector<double> g(key.size());
    double m = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      m += matching_loss(queries->row(b), key, g);
      for (std::size_t k = 0; k < g.size(); ++k) r.d_key[k] += g[k];
    }
    r.matching = m * inv_b;
    for (double& v : r.d_key) v *= lambda * inv_b;
  }
  r.loss = r.classification + lambda * r.matching;
  return r;
}

TaskTrace train_task(ContinualModel& model, TaskData& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.size() == 0) throw DataError("train_task: task " + std::to_string(data.task) + " has no samples");
  if (!(cfg.variant == model.variant())) {
    throw ConfigError("train_task: variant " + cfg.variant.name() + " does not match the model's " +
                      model.variant().name());
  }
  if (model.backbone().frozen() != cfg.variant.freeze_backbone) {
    throw StateError("train_task: backbone freeze state does not match the variant");
  }
  const std::size_t task = data.task;
  const ClassRange mask = model.head().range(task);
  const bool prompts = cfg.variant.use_prompts;
  if (prompts && data.queries.empty()) data.queries = model.queries(data.images);

  NamedParams params = model.trainable_parameters(task);
  AdamState adam(AdamConfig{cfg.lr});
  EfficientCbpBlock* cbp = model.cbp();
  Backbone& backbone = model.backbone();
  const bool backprop_backbone = prompts || !backbone.frozen();

  TaskTrace trace;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<std::size_t> labels;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    model.shuffle_rng().shuffle(std::span<std::size_t>(order));
    double epoch_loss = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(cfg.batch, order.size() - start));
      labels.clear();
      for (std::size_t i : idx) labels.push_back(data.labels[i]);
      const Tensor x = gather_rows(data.images, idx);
      Tensor q;
      if (prompts) q = gather_rows(data.queries, idx);

      zero_grads(params);
      const PromptMap prompt_map = model.prompts_for(task);
      ForwardCache fc;
      const Tensor features = backbone.forward(x, prompt_map, backprop_backbone ? &fc : nullptr);
      CbpCache cc;
      const Tensor z = cbp ? cbp->forward(features, true, &cc) : features;
      const Tensor logits = model.head().forward(z);

      std::span<const double> key;
      if (prompts) key = model.pool().task(task).key.values();
      LossResult r = loss(logits, labels, prompts ? &q : nullptr, key, cfg.lambda, mask);
      if (!std::isfinite(r.loss)) {
        throw NumericDomainError("training diverged: non-finite loss at task " + std::to_string(task) +
                                 ", epoch " + std::to_string(epoch) + ", batch " +
                                 std::to_string(trace.batches));
      }
      epoch_loss += r.loss * static_cast<double>(idx.size());
      correct += r.correct;

      Tensor dz = model.head().backward(r.d_logits, z);
      const Tensor d_features = cbp ? cbp->backward(dz, cc) : std::move(dz);
      if (prompts) {
        auto g = model.pool().task(task).key.grad();
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += r.d_key[k];
      }
      if (backprop_backbone) backbone.backward(d_features, fc, prompt_map);
      adam_step(params, adam);
      if (cbp) {
        cbp->update_utility(cbp->last_snapshot());
        trace.units_reinitialized += cbp->cbp_step(model.reinit_rng(), &adam).size();
        ++trace.cbp_steps;
        ++model.cbp_steps;
      }
      ++trace.batches;
    }
    trace.epoch_loss.push_back(epoch_loss / static_cast<double>(data.size()));
    trace.final_epoch_accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  }
  return trace;
}

double evaluate(ContinualModel& model, TaskData& data, EvalStats* stats) {
  if (data.size() == 0) throw DataError("evaluate: empty test set");
  if (model.tasks() == 0) throw StateError("evaluate: no task has been trained");
  const bool prompts = model.variant().use_prompts;
  if (prompts && data.queries.empty()) data.queries = model.queries(data.images);

  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < data.size(); ++i) {
    groups[prompts ? select_eprompt(data.queries.row(i), model.pool()) : 0].push_back(i);
  }
  EvalStats s;
  s.count = data.size();
  const std::size_t classes = model.head().classes();
  EfficientCbpBlock* cbp = model.cbp();
  for (const auto& [task, members] : groups) {
    if (prompts && task == data.task) s.selected_correctly += members.size();
    const PromptMap prompt_map = model.prompts_for(task);
    for (std::size_t start = 0; start < members.size(); start += kEvalChunk) {
      const std::span<const std::size_t> idx(members.data() + start,
                                             std::min(kEvalChunk, members.size() - start));
      const Tensor features = model.backbone().forward(gather_rows(data.images, idx), prompt_map);
      const Tensor z = cbp ? cbp->forward(features, false) : features;
      const Tensor logits = model.head().forward(z);
      for (std::size_t r = 0; r < idx.size(); ++r) {
        if (argmax_row(logits, r, 0, classes) == data.labels[idx[r]]) ++s.correct;
      }
    }
  }
  if (!prompts) s.selected_correctly = s.count;
  if (stats) *stats = s;
  return static_cast<double>(s.correct) / static_cast<double>(s.count);
}

std::vector<double> pretrain_backbone(Backbone& backbone, const TaskData& data, std::size_t classes,
                                      std::size_t epochs, double lr, std::size_t batch, Rng& rng) {
  if (data.size() == 0) throw DataError("pretrain: no base-class samples");
  if (batch == 0 || !(lr > 0.0)) throw ConfigError("pretrain: batch and lr must be positive");
  backbone.set_frozen(false);
  Head head(backbone.config().dim);
  Rng head_rng = rng.derive("pretrain/head");
  head.add_task(classes, head_rng);
  const ClassRange all{0, classes};
  NamedParams params = backbone.parameters();
  for (auto& p : head.parameters()) params.push_back(p);
  AdamState adam(AdamConfig{lr});

  std::vector<double> trace;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<std::size_t> labels;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(batch, order.size() - start));
      labels.clear();
      for (std::size_t i : idx) labels.push_back(data.labels[i]);
      zero_grads(params);
      ForwardCache fc;
      const Tensor features = backbone.forward(gather_rows(data.images, idx), PromptMap{}, &fc);
      const Tensor logits = head.forward(features);
      LossResult r = loss(logits, labels, nullptr, {}, 0.0, all);
      if (!std::isfinite(r.loss)) {
        throw NumericDomainError("pretraining diverged: non-finite loss in epoch " + std::to_string(epoch));
      }
      total += r.loss * static_cast<double>(idx.size());
      backbone.backward(head.backward(r.d_logits, features), fc, PromptMap{});
      adam_step(params, adam);
    }
    trace.push_back(total / static_cast<double>(data.size()));
  }
  backbone.set_frozen(true);
  return trace;
}

}  // namespace cbpnet
