#include "cbpnet/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "cbpnet/errors.hpp"

namespace cbpnet {

using nlohmann::json;

std::vector<VariantFlags> VariantFlags::ablation_grid() {
  return {ft_seq(), ft_seq_cbp(), dual_prompt(), cbpnet()};
}

std::string VariantFlags::name() const {
  if (*this == ft_seq()) return "ft-seq";
  if (*this == ft_seq_cbp()) return "ft-seq+cbp";
  if (*this == dual_prompt()) return "dualprompt";
  if (*this == cbpnet()) return "cbpnet";
  std::string s;
  s += use_prompts ? "prompts" : "noprompts";
  s += use_cbp ? "-cbp" : "-nocbp";
  s += freeze_backbone ? "-frozen" : "-tuned";
  return s;
}

std::optional<VariantFlags> VariantFlags::from_name(const std::string& name) {
  for (const auto& v : ablation_grid()) {
    if (v.name() == name) return v;
  }
  return std::nullopt;
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("train: epochs must be positive");
  if (batch == 0) throw ConfigError("train: batch must be positive");
  if (!(lr > 0.0)) throw ConfigError("train: lr must be positive");
  if (!(lambda >= 0.0)) throw ConfigError("train: lambda must be non-negative");
}

void ExperimentConfig::validate() const {
  backbone.validate();
  train_config().validate();
  if (train.pretrain_epochs > 0 && !(train.pretrain_lr > 0.0)) {
    throw ConfigError("train: pretrain_lr must be positive");
  }
  for (std::size_t l : prompts.g_layers) {
    if (l >= backbone.depth) throw ConfigError("prompts: G layer " + std::to_string(l) + " >= depth");
  }
  for (std::size_t l : prompts.e_layers) {
    if (l >= backbone.depth) throw ConfigError("prompts: E layer " + std::to_string(l) + " >= depth");
  }
  std::set<std::size_t> g(prompts.g_layers.begin(), prompts.g_layers.end());
  for (std::size_t l : prompts.e_layers) {
    if (g.count(l)) throw ConfigError("prompts: layer " + std::to_string(l) + " carries both G and E prompts");
  }
  if (!prompts.g_layers.empty() && prompts.g_length == 0) {
    throw ConfigError("prompts: g_length must be at least 1");
  }
  if (!prompts.e_layers.empty() && prompts.e_length == 0) {
    throw ConfigError("prompts: e_length must be at least 1");
  }
  cbp_config().validate();
  if (data.tasks == 0) throw ConfigError("data: tasks must be positive");
  if (data.container.empty()) {
    if (data.classes < 2) throw ConfigError("data: at least two classes are required");
    if (data.per_class < 2) throw ConfigError("data: per_class must be at least 2");
  }
}

CbpConfig ExperimentConfig::cbp_config() const {
  CbpConfig c;
  c.input_dim = backbone.dim;
  c.hidden = cbp.hidden ? cbp.hidden : std::max<std::size_t>(1, backbone.dim / 4);
  c.output_dim = cbp.output_dim ? cbp.output_dim : backbone.dim;
  c.eta = cbp.eta;
  c.maturity = cbp.maturity;
  c.replacement_rate = cbp.rho;
  c.utility = cbp.utility;
  c.init = cbp.init;
  return c;
}

TrainConfig ExperimentConfig::train_config() const {
  return TrainConfig{train.epochs, train.lr, train.batch, train.lambda, seed, variant};
}

ExperimentConfig ExperimentConfig::tiny() { return ExperimentConfig{}; }

ExperimentConfig ExperimentConfig::vit_b16() {
  ExperimentConfig c;
  c.name = "vit-b16";
  c.backbone = BackboneConfig{224, 16, 3, 12, 768, 12, 4.0, 1e-6};
  c.cbp.hidden = 60;
  c.data.classes = 100;
  c.data.base = 0;
  c.data.tasks = 10;
  c.num_classes = 100;
  return c;
}

std::string utility_form_name(UtilityForm form) {
  return form == UtilityForm::AbsOfSum ? "abs_of_sum" : "sum_of_abs";
}

std::string init_kind_name(InitKind kind) {
  return kind == InitKind::UniformFanIn ? "uniform-fan-in" : "normal-scaled";
}

namespace {

void check_keys(const json& obj, const char* section, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(std::string("config section '") + section + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(std::string("unknown key '") + key + "' in config section '" + section + "'");
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

VariantFlags variant_from_json(const json& j) {
  if (j.is_string()) {
    auto v = VariantFlags::from_name(j.get<std::string>());
    if (!v) throw ConfigError("unknown variant '" + j.get<std::string>() + "'");
    return *v;
  }
  check_keys(j, "variant", {"use_prompts", "use_cbp", "freeze_backbone", "name"});
  VariantFlags v;
  const bool explicit_flags =
      j.contains("use_prompts") && j.contains("use_cbp") && j.contains("freeze_backbone");
  if (j.contains("name")) {
    auto preset = VariantFlags::from_name(j.at("name").get<std::string>());
    if (preset) {
      v = *preset;
    } else if (!explicit_flags) {
      throw ConfigError("unknown variant '" + j.at("name").get<std::string>() + "'");
    }
  }
  read(j, "use_prompts", v.use_prompts);
  read(j, "use_cbp", v.use_cbp);
  read(j, "freeze_backbone", v.freeze_backbone);
  return v;
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  try {
    check_keys(j, "root", {"name", "backbone", "prompts", "cbp", "train", "data", "variant", "seed",
                           "num_classes", "checkpoint_dir"});
    read(j, "name", c.name);
    read(j, "seed", c.seed);
    read(j, "num_classes", c.num_classes);
    read(j, "checkpoint_dir", c.checkpoint_dir);
    if (j.contains("backbone")) {
      const json& b = j.at("backbone");
      check_keys(b, "backbone", {"image_size", "patch_size", "channels", "depth", "dim", "heads",
                                 "mlp_ratio", "ln_eps"});
      read(b, "image_size", c.backbone.image_size);
      read(b, "patch_size", c.backbone.patch_size);
      read(b, "channels", c.backbone.channels);
      read(b, "depth", c.backbone.depth);
      read(b, "dim", c.backbone.dim);
      read(b, "heads", c.backbone.heads);
      read(b, "mlp_ratio", c.backbone.mlp_ratio);
      read(b, "ln_eps", c.backbone.ln_eps);
    }
    if (j.contains("prompts")) {
      const json& p = j.at("prompts");
      check_keys(p, "prompts", {"g_length", "g_layers", "e_length", "e_layers"});
      read(p, "g_length", c.prompts.g_length);
      read(p, "g_layers", c.prompts.g_layers);
      read(p, "e_length", c.prompts.e_length);
      read(p, "e_layers", c.prompts.e_layers);
    }
    if (j.contains("cbp")) {
      const json& p = j.at("cbp");
      check_keys(p, "cbp", {"eta", "m", "rho", "hidden", "output_dim", "utility", "init"});
      read(p, "eta", c.cbp.eta);
      read(p, "m", c.cbp.maturity);
      read(p, "rho", c.cbp.rho);
      read(p, "hidden", c.cbp.hidden);
      read(p, "output_dim", c.cbp.output_dim);
      if (p.contains("utility")) {
        const auto u = p.at("utility").get<std::string>();
        if (u == "abs_of_sum") {
          c.cbp.utility = UtilityForm::AbsOfSum;
        } else if (u == "sum_of_abs") {
          c.cbp.utility = UtilityForm::SumOfAbs;
        } else {
          throw ConfigError("cbp.utility must be 'abs_of_sum' or 'sum_of_abs'");
        }
      }
      if (p.contains("init")) {
        const json& i = p.at("init");
        check_keys(i, "cbp.init", {"kind", "gain"});
        if (i.contains("kind")) {
          const auto k = i.at("kind").get<std::string>();
          if (k == "uniform-fan-in") {
            c.cbp.init.kind = InitKind::UniformFanIn;
          } else if (k == "normal-scaled") {
            c.cbp.init.kind = InitKind::NormalScaled;
          } else {
            throw ConfigError("cbp.init.kind must be 'uniform-fan-in' or 'normal-scaled'");
          }
        }
        read(i, "gain", c.cbp.init.gain);
      }
    }
    if (j.contains("train")) {
      const json& t = j.at("train");
      check_keys(t, "train", {"epochs", "lr", "batch", "lambda", "pretrain_epochs", "pretrain_lr"});
      read(t, "epochs", c.train.epochs);
      read(t, "lr", c.train.lr);
      read(t, "batch", c.train.batch);
      read(t, "lambda", c.train.lambda);
      read(t, "pretrain_epochs", c.train.pretrain_epochs);
      read(t, "pretrain_lr", c.train.pretrain_lr);
    }
    if (j.contains("data")) {
      const json& d = j.at("data");
      check_keys(d, "data", {"container", "classes", "per_class", "base", "tasks", "noise", "seed"});
      read(d, "container", c.data.container);
      read(d, "classes", c.data.classes);
      read(d, "per_class", c.data.per_class);
      read(d, "base", c.data.base);
      read(d, "tasks", c.data.tasks);
      read(d, "noise", c.data.noise);
      if (d.contains("seed") && !d.at("seed").is_null()) c.data.seed = d.at("seed").get<std::uint64_t>();
    }
    if (j.contains("variant")) c.variant = variant_from_json(j.at("variant"));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

json to_json(const ExperimentConfig& c) {
  json j;
  j["name"] = c.name;
  j["seed"] = c.seed;
  j["num_classes"] = c.num_classes;
  j["checkpoint_dir"] = c.checkpoint_dir;
  j["backbone"] = {{"image_size", c.backbone.image_size}, {"patch_size", c.backbone.patch_size},
                   {"channels", c.backbone.channels},     {"depth", c.backbone.depth},
                   {"dim", c.backbone.dim},               {"heads", c.backbone.heads},
                   {"mlp_ratio", c.backbone.mlp_ratio},   {"ln_eps", c.backbone.ln_eps}};
  j["prompts"] = {{"g_length", c.prompts.g_length},
                  {"g_layers", c.prompts.g_layers},
                  {"e_length", c.prompts.e_length},
                  {"e_layers", c.prompts.e_layers}};
  const CbpConfig resolved = c.cbp_config();
  j["cbp"] = {{"eta", c.cbp.eta},
              {"m", c.cbp.maturity},
              {"rho", c.cbp.rho},
              {"hidden", resolved.hidden},
              {"output_dim", resolved.output_dim},
              {"utility", utility_form_name(c.cbp.utility)},
              {"init", {{"kind", init_kind_name(c.cbp.init.kind)}, {"gain", c.cbp.init.gain}}}};
  j["train"] = {{"epochs", c.train.epochs},
                {"lr", c.train.lr},
                {"batch", c.train.batch},
                {"lambda", c.train.lambda},
                {"pretrain_epochs", c.train.pretrain_epochs},
                {"pretrain_lr", c.train.pretrain_lr}};
  j["data"] = {{"container", c.data.container}, {"classes", c.data.classes},
               {"per_class", c.data.per_class}, {"base", c.data.base},
               {"tasks", c.data.tasks},         {"noise", c.data.noise}};
  j["data"]["seed"] = c.data.seed ? json(*c.data.seed) : json(nullptr);
  j["variant"] = {{"name", c.variant.name()},
                  {"use_prompts", c.variant.use_prompts},
                  {"use_cbp", c.variant.use_cbp},
                  {"freeze_backbone", c.variant.freeze_backbone}};
  return j;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw FormatError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace cbpnet
