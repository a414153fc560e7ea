#include "cbpnet/experiment.hpp"

#include <chrono>
#include <string>

#include "cbpnet/checkpoint.hpp"
#include "cbpnet/errors.hpp"
#include "cbpnet/metrics.hpp"

namespace cbpnet {

PreparedData prepare_data(const ExperimentConfig& cfg) {
  cfg.validate();
  const BackboneConfig& b = cfg.backbone;
  DatasetContainer ds;
  if (!cfg.data.container.empty()) {
    ds = load_container(cfg.data.container);
  } else {
    ds = generate_synthetic(SyntheticSpec{cfg.data.classes, cfg.data.per_class, b.image_size, b.image_size,
                                          b.channels, cfg.data.noise, cfg.data_seed()});
  }
  if (ds.height != b.image_size || ds.width != b.image_size || ds.channels != b.channels) {
    throw ShapeError("dataset images are " + std::to_string(ds.height) + "x" + std::to_string(ds.width) + "x" +
                     std::to_string(ds.channels) + " but the backbone expects " + std::to_string(b.image_size) +
                     "x" + std::to_string(b.image_size) + "x" + std::to_string(b.channels));
  }
  PreparedData data;
  data.split = split_class_incremental(ds, cfg.data.base, cfg.data.tasks, cfg.data_seed());
  const auto& spec = data.split.spec;
  if (!spec.base_classes.empty()) data.base = make_task_data(data.split.base.train, spec.base_classes, 0, 0);
  std::size_t offset = 0;
  for (std::size_t t = 0; t < spec.task_classes.size(); ++t) {
    const auto& tt = data.split.tasks[t];
    if (tt.train.count() == 0 || tt.test.count() == 0) {
      throw DataError("task " + std::to_string(t) + " has an empty train or test split");
    }
    data.train.push_back(make_task_data(tt.train, spec.task_classes[t], offset, t));
    data.test.push_back(make_task_data(tt.test, spec.task_classes[t], offset, t));
    data.class_offsets.push_back(offset);
    offset += spec.task_classes[t].size();
  }
  return data;
}

PretrainResult pretrain(const ExperimentConfig& cfg, const PreparedData& data) {
  Rng init(derive_seed(cfg.seed, "backbone/init"));
  PretrainResult r{Backbone(cfg.backbone, init), {}};
  const std::size_t classes = data.split.spec.base_classes.size();
  if (classes > 0 && cfg.train.pretrain_epochs > 0) {
    Rng rng(derive_seed(cfg.seed, "backbone/pretrain"));
    r.loss = pretrain_backbone(r.backbone, data.base, classes, cfg.train.pretrain_epochs, cfg.train.pretrain_lr,
                               cfg.train.batch, rng);
  }
  r.backbone.set_frozen(true);
  return r;
}

Backbone load_backbone(const BackboneConfig& cfg, const std::filesystem::path& path) {
  Backbone b(cfg);
  restore(b.parameters(), load_checkpoint(path));
  b.set_frozen(true);
  return b;
}

void save_backbone(const Backbone& backbone, const std::filesystem::path& path) {
  NamedTensors entries;
  for (const auto& [name, t] : backbone.parameters()) {
    entries.emplace_back(name, Tensor(t->shape(), std::vector<double>(t->values().begin(), t->values().end())));
  }
  save_checkpoint(entries, path);
}

RunResult run_sequence(const ExperimentConfig& cfg, PreparedData& data, const Backbone& pretrained) {
  cfg.validate();
  const auto started = std::chrono::steady_clock::now();
  const std::size_t tasks = data.train.size();
  if (tasks == 0) throw DataError("run_sequence: no tasks prepared");

  RunResult result;
  result.initial_checksum = pretrained.checksum();
  if (cfg.variant.use_prompts && data.queries_for != result.initial_checksum) {
    for (auto& d : data.train) d.queries = Tensor();
    for (auto& d : data.test) d.queries = Tensor();
    data.queries_for = result.initial_checksum;
  }
  ContinualModel model(cfg, pretrained);
  const TrainConfig tc = cfg.train_config();
  MetricsReport& report = result.report;
  report.variant = cfg.variant.name();
  report.matrix = AccuracyMatrix(tasks);
  result.evals.resize(tasks);

  for (std::size_t i = 0; i < tasks; ++i) {
    const std::size_t t = model.begin_task(data.split.spec.task_classes[i].size());
    if (t != i) throw StateError("run_sequence: task registration out of order");
    TaskTrace trace = train_task(model, data.train[i], tc);
    report.loss_traces.push_back(trace.epoch_loss);
    report.units_reinitialized += trace.units_reinitialized;
    result.traces.push_back(std::move(trace));
    for (std::size_t s = 0; s <= i; ++s) {
      EvalStats stats;
      report.matrix.set(i, s, evaluate(model, data.test[s], &stats));
      result.evals[i].push_back(stats);
    }
    if (!cfg.checkpoint_dir.empty()) {
      std::filesystem::create_directories(cfg.checkpoint_dir);
      save_checkpoint(model.state(), std::filesystem::path(cfg.checkpoint_dir) /
                                         (report.variant + "-task" + std::to_string(i + 1) + ".cbpn"));
    }
  }
  report.cbp_steps = model.cbp_steps;
  report.backbone_checksum = model.backbone().checksum();
  report.config = to_json(cfg);
  report.seed = cfg.seed;
  finalize_metrics(report);
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

RunResult run_sequence(const ExperimentConfig& cfg) {
  PreparedData data = prepare_data(cfg);
  const PretrainResult pre = pretrain(cfg, data);
  return run_sequence(cfg, data, pre.backbone);
}

std::vector<RunResult> ablate(const ExperimentConfig& cfg, PreparedData& data, const Backbone& pretrained) {
  std::vector<RunResult> out;
  for (const VariantFlags& v : VariantFlags::ablation_grid()) {
    ExperimentConfig c = cfg;
    c.variant = v;
    out.push_back(run_sequence(c, data, pretrained));
  }
  return out;
}

std::vector<RunResult> ablate(const ExperimentConfig& cfg) {
  PreparedData data = prepare_data(cfg);
  const PretrainResult pre = pretrain(cfg, data);
  return ablate(cfg, data, pre.backbone);
}

ProbeResult plasticity_probe(const ExperimentConfig& cfg, PreparedData& data, const Backbone& pretrained) {
  if (data.train.size() < 10) {
    throw ConfigError("plasticity probe needs at least 10 tasks, got " + std::to_string(data.train.size()));
  }
  ExperimentConfig on = cfg;
  on.variant.use_cbp = true;
  ExperimentConfig off = cfg;
  off.variant.use_cbp = false;
  ProbeResult r{run_sequence(on, data, pretrained), run_sequence(off, data, pretrained), {}};
  r.curves.push_back({"cbp on (" + on.variant.name() + ")", r.cbp_on.report.learning_curve});
  r.curves.push_back({"cbp off (" + off.variant.name() + ")", r.cbp_off.report.learning_curve});
  return r;
}

ProbeResult plasticity_probe(const ExperimentConfig& cfg) {
  PreparedData data = prepare_data(cfg);
  const PretrainResult pre = pretrain(cfg, data);
  return plasticity_probe(cfg, data, pre.backbone);
}

}  // namespace cbpnet
