#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "cbpnet/config.hpp"
#include "cbpnet/errors.hpp"
#include "cbpnet/experiment.hpp"
#include "cbpnet/param_count.hpp"
#include "cbpnet/report.hpp"

namespace fs = std::filesystem;
using namespace cbpnet;

namespace {

constexpr int kOk = 0;
constexpr int kRuntimeFailure = 1;
constexpr int kUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
};

ExperimentConfig resolve_config(const Globals& g) {
  if (g.config.empty()) throw UsageError("--config is required for this subcommand");
  ExperimentConfig cfg;
  try {
    cfg = load_config(g.config);
  } catch (const Error& e) {
    throw UsageError(std::string("cannot use config: ") + e.what());
  }
  if (g.seed) cfg.seed = *g.seed;
  return cfg;
}

void print_summary(const MetricsReport& r) {
  std::printf("%-12s avg_accuracy %.4f", r.variant.c_str(), r.avg_accuracy);
  if (r.forgetting) std::printf("  forgetting %.4f", *r.forgetting);
  std::printf("  (%.1fs)\n", r.wall_clock_seconds);
}

int cmd_pretrain(const Globals& g) {
  const ExperimentConfig cfg = resolve_config(g);
  PreparedData data = prepare_data(cfg);
  const PretrainResult pre = pretrain(cfg, data);
  fs::create_directories(g.out);
  save_backbone(pre.backbone, fs::path(g.out) / "backbone.cbpn");
  nlohmann::json j{{"loss", pre.loss},
                   {"checksum", pre.backbone.checksum()},
                   {"base_classes", data.split.spec.base_classes},
                   {"seed", cfg.seed}};
  write_text(fs::path(g.out) / "pretrain.json", j.dump(2) + "\n");
  std::printf("pretrained on %zu base classes, checksum %016llx\n", data.split.spec.base_classes.size(),
              static_cast<unsigned long long>(pre.backbone.checksum()));
  return kOk;
}

int cmd_run(const Globals& g, const std::string& backbone_path) {
  const ExperimentConfig cfg = resolve_config(g);
  PreparedData data = prepare_data(cfg);
  const Backbone backbone =
      backbone_path.empty() ? pretrain(cfg, data).backbone : load_backbone(cfg.backbone, backbone_path);
  const RunResult r = run_sequence(cfg, data, backbone);
  emit_report(r.report, g.out);
  print_summary(r.report);
  return kOk;
}

int cmd_ablate(const Globals& g) {
  const ExperimentConfig cfg = resolve_config(g);
  PreparedData data = prepare_data(cfg);
  const PretrainResult pre = pretrain(cfg, data);
  const auto runs = ablate(cfg, data, pre.backbone);
  std::vector<Curve> curves;
  nlohmann::json summary = nlohmann::json::object();
  for (const auto& r : runs) {
    emit_report(r.report, fs::path(g.out) / r.report.variant);
    curves.push_back({r.report.variant, r.report.average_curve});
    summary[r.report.variant] = {{"avg_accuracy", r.report.avg_accuracy},
                                 {"forgetting", r.report.forgetting ? nlohmann::json(*r.report.forgetting)
                                                                    : nlohmann::json()}};
    print_summary(r.report);
  }
  summary["split_seed"] = data.split.spec.seed;
  summary["seed"] = cfg.seed;
  write_text(fs::path(g.out) / "summary.json", summary.dump(2) + "\n");
  write_text(fs::path(g.out) / "curves.svg", curves_svg(curves, "average accuracy over tasks"));
  return kOk;
}

int cmd_probe(const Globals& g) {
  const ExperimentConfig cfg = resolve_config(g);
  const ProbeResult p = plasticity_probe(cfg);
  emit_report(p.cbp_on.report, fs::path(g.out) / "cbp_on");
  emit_report(p.cbp_off.report, fs::path(g.out) / "cbp_off");
  write_text(fs::path(g.out) / "curves.svg", curves_svg(p.curves, "accuracy on each task right after learning it"));
  nlohmann::json j{{"cbp_on", p.cbp_on.report.learning_curve},
                   {"cbp_off", p.cbp_off.report.learning_curve},
                   {"pretrained_checksum_on", p.cbp_on.initial_checksum},
                   {"pretrained_checksum_off", p.cbp_off.initial_checksum}};
  write_text(fs::path(g.out) / "probe.json", j.dump(2) + "\n");
  for (const auto& c : p.curves) {
    std::printf("%s:", c.label.c_str());
    for (double v : c.values) std::printf(" %.3f", v);
    std::printf("\n");
  }
  return kOk;
}

int cmd_report(const std::string& matrix_path, const Globals& g) {
  if (matrix_path.empty()) throw UsageError("report needs a matrix.csv path");
  const AccuracyMatrix mx = read_matrix_csv(matrix_path);
  nlohmann::json j{{"tasks", mx.tasks()}, {"avg_accuracy", avg_accuracy(mx)}};
  j["forgetting"] = mx.tasks() >= 2 ? nlohmann::json(forgetting(mx)) : nlohmann::json();
  std::cout << j.dump(2) << "\n";
  if (!g.out.empty() && g.out != "out") {
    fs::create_directories(g.out);
    write_text(fs::path(g.out) / "report.json", j.dump(2) + "\n");
  }
  return kOk;
}

int cmd_count(const Globals& g, const std::string& preset) {
  ExperimentConfig cfg;
  if (!g.config.empty()) {
    cfg = resolve_config(g);
  } else if (preset == "vit-b16") {
    cfg = ExperimentConfig::vit_b16();
  } else if (preset == "tiny") {
    cfg = ExperimentConfig::tiny();
  } else {
    throw UsageError("unknown preset '" + preset + "' (expected tiny or vit-b16)");
  }
  const ParameterReport r = count_trainable(cfg);
  std::cout << format_report(r) << to_json(r).dump() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual learning with prompts and a plasticity-preserving bottleneck"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "Experiment config (JSON)");
  app.add_option("--seed", g.seed, "Override the config seed");
  app.add_option("--out", g.out, "Output directory");

  auto* pretrain_cmd = app.add_subcommand("pretrain", "Train and freeze the backbone on the base classes");
  auto* run_cmd = app.add_subcommand("run", "Run the continual task sequence");
  std::string backbone_path;
  run_cmd->add_option("--backbone", backbone_path, "Pretrained backbone checkpoint");
  auto* ablate_cmd = app.add_subcommand("ablate", "Run all four ablation variants on shared seeds");
  auto* probe_cmd = app.add_subcommand("probe", "Plasticity probe: matched runs with the CBP block on and off");
  auto* report_cmd = app.add_subcommand("report", "Recompute metrics from a matrix.csv");
  std::string matrix_path;
  report_cmd->add_option("matrix", matrix_path, "Path to matrix.csv")->required();
  auto* count_cmd = app.add_subcommand("count", "Print the trainable-parameter breakdown");
  std::string preset = "vit-b16";
  count_cmd->add_option("--preset", preset, "tiny or vit-b16 when no config is given");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kUsage;
  }

  try {
    if (*pretrain_cmd) return cmd_pretrain(g);
    if (*run_cmd) return cmd_run(g, backbone_path);
    if (*ablate_cmd) return cmd_ablate(g);
    if (*probe_cmd) return cmd_probe(g);
    if (*report_cmd) return cmd_report(matrix_path, g);
    if (*count_cmd) return cmd_count(g, preset);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "cbpnet: " << e.what() << "\n";
    return kRuntimeFailure;
  }
  return kUsage;
}
