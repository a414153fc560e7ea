#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include "cbpnet/config.hpp"
#include "cbpnet/dataset.hpp"
#include "cbpnet/errors.hpp"
#include "cbpnet/experiment.hpp"
#include "cbpnet/metrics.hpp"
#include "cbpnet/ops.hpp"
#include "cbpnet/param_count.hpp"
#include "cbpnet/prompt.hpp"
#include "cbpnet/report.hpp"

namespace py = pybind11;
using namespace cbpnet;

namespace {

AccuracyMatrix matrix_from_rows(const std::vector<std::vector<double>>& rows) {
  AccuracyMatrix mx(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != i + 1) {
      throw ShapeError("row " + std::to_string(i) + " must hold " + std::to_string(i + 1) + " accuracies");
    }
    for (std::size_t t = 0; t <= i; ++t) mx.set(i, t, rows[i][t]);
  }
  return mx;
}

std::vector<std::vector<double>> rows_from_matrix(const AccuracyMatrix& mx) {
  std::vector<std::vector<double>> rows(mx.tasks());
  for (std::size_t i = 0; i < mx.tasks(); ++i) {
    for (std::size_t t = 0; t <= i; ++t) rows[i].push_back(mx.at(i, t));
  }
  return rows;
}

ExperimentConfig parse_config(const std::string& text, std::optional<std::uint64_t> seed) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig cfg = config_from_json(j);
  if (seed) cfg.seed = *seed;
  return cfg;
}

py::dict container_to_dict(const DatasetContainer& ds) {
  py::array_t<std::uint8_t> images({ds.count(), std::size_t{ds.height}, std::size_t{ds.width},
                                    std::size_t{ds.channels}});
  std::memcpy(images.mutable_data(), ds.pixels.data(), ds.pixels.size());
  py::array_t<std::uint16_t> labels(ds.count());
  std::memcpy(labels.mutable_data(), ds.labels.data(), ds.labels.size() * sizeof(std::uint16_t));
  py::dict d;
  d["images"] = images;
  d["labels"] = labels;
  d["class_count"] = ds.class_count;
  return d;
}

DatasetContainer container_from_arrays(py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast> images,
                                       py::array_t<std::uint16_t, py::array::c_style | py::array::forcecast> labels,
                                       std::size_t class_count) {
  if (images.ndim() != 4) throw ShapeError("images must be count x H x W x C");
  DatasetContainer ds;
  ds.height = static_cast<std::uint16_t>(images.shape(1));
  ds.width = static_cast<std::uint16_t>(images.shape(2));
  ds.channels = static_cast<std::uint8_t>(images.shape(3));
  ds.class_count = static_cast<std::uint16_t>(class_count);
  ds.pixels.assign(images.data(), images.data() + images.size());
  ds.labels.assign(labels.data(), labels.data() + labels.size());
  ds.validate();
  return ds;
}

}  // namespace

PYBIND11_MODULE(_cbpnet, m) {
  m.doc() = "Prompted continual learning with a plasticity-preserving bottleneck block";

  auto& error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", error.ptr());
  py::register_exception<NumericDomainError>(m, "NumericDomainError", error.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", error.ptr());
  py::register_exception<DataError>(m, "DataError", error.ptr());
  py::register_exception<FormatError>(m, "FormatError", error.ptr());
  py::register_exception<CorruptionError>(m, "CorruptionError", error.ptr());
  py::register_exception<StateError>(m, "StateError", error.ptr());
  py::register_exception<IoError>(m, "IoError", error.ptr());
  py::register_exception<IndexError>(m, "IndexError", error.ptr());

  m.def("gelu", py::overload_cast<double>(&gelu), py::arg("x"));
  m.def("gelu_derivative", &gelu_derivative, py::arg("x"));
  m.def(
      "softmax", [](const std::vector<double>& v) { return softmax(v); }, py::arg("values"));
  m.def(
      "matching_loss", [](const std::vector<double>& q, const std::vector<double>& k) { return matching_loss(q, k); },
      py::arg("query"), py::arg("key"));
  m.def(
      "select_eprompt",
      [](const std::vector<double>& q, const std::vector<std::vector<double>>& keys) {
        if (keys.empty()) throw StateError("select_eprompt: no keys");
        EPromptPool pool(1, q.size(), {});
        Rng rng(0);
        for (const auto& k : keys) {
          if (k.size() != q.size()) throw ShapeError("select_eprompt: key width differs from the query");
          const std::size_t t = pool.add_task(rng);
          std::copy(k.begin(), k.end(), pool.task(t).key.data());
        }
        return select_eprompt(q, pool);
      },
      py::arg("query"), py::arg("keys"));

  m.def(
      "avg_accuracy", [](const std::vector<std::vector<double>>& rows) { return avg_accuracy(matrix_from_rows(rows)); },
      py::arg("matrix"), "Mean of the final row of a lower-triangular accuracy matrix.");
  m.def(
      "forgetting", [](const std::vector<std::vector<double>>& rows) { return forgetting(matrix_from_rows(rows)); },
      py::arg("matrix"));
  m.def(
      "matrix_csv", [](const std::vector<std::vector<double>>& rows) { return matrix_csv(matrix_from_rows(rows)); },
      py::arg("matrix"));
  m.def(
      "parse_matrix_csv", [](const std::string& text) { return rows_from_matrix(parse_matrix_csv(text)); },
      py::arg("text"));

  m.def(
      "count_trainable",
      [](std::optional<std::string> config_json, const std::string& preset) {
        ExperimentConfig cfg;
        if (config_json) {
          cfg = parse_config(*config_json, std::nullopt);
        } else if (preset == "vit-b16") {
          cfg = ExperimentConfig::vit_b16();
        } else if (preset == "tiny") {
          cfg = ExperimentConfig::tiny();
        } else {
          throw ConfigError("unknown preset '" + preset + "'");
        }
        return py::module_::import("json").attr("loads")(to_json(count_trainable(cfg)).dump());
      },
      py::arg("config_json") = py::none(), py::arg("preset") = "vit-b16");

  m.def(
      "generate_synthetic",
      [](std::size_t classes, std::size_t per_class, std::size_t height, std::size_t width, std::size_t channels,
         double noise, std::uint64_t seed) {
        return container_to_dict(generate_synthetic({classes, per_class, height, width, channels, noise, seed}));
      },
      py::arg("classes"), py::arg("per_class"), py::arg("height") = 32, py::arg("width") = 32,
      py::arg("channels") = 3, py::arg("noise") = 40.0, py::arg("seed") = 0);
  m.def(
      "save_container",
      [](const std::string& path, py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast> images,
         py::array_t<std::uint16_t, py::array::c_style | py::array::forcecast> labels, std::size_t class_count) {
        save_container(container_from_arrays(images, labels, class_count), path);
      },
      py::arg("path"), py::arg("images"), py::arg("labels"), py::arg("class_count"));
  m.def(
      "load_container", [](const std::string& path) { return container_to_dict(load_container(path)); },
      py::arg("path"));

  m.def(
      "default_config", [] { return to_json(ExperimentConfig::tiny()).dump(2); },
      "Desk-scale default configuration as JSON text.");
  m.def(
      "run_sequence",
      [](const std::string& config_json, std::optional<std::uint64_t> seed) {
        const ExperimentConfig cfg = parse_config(config_json, seed);
        RunResult r;
        {
          py::gil_scoped_release release;
          r = run_sequence(cfg);
        }
        py::dict d;
        d["variant"] = r.report.variant;
        d["matrix"] = rows_from_matrix(r.report.matrix);
        d["avg_accuracy"] = r.report.avg_accuracy;
        d["forgetting"] = r.report.forgetting ? py::cast(*r.report.forgetting) : py::none();
        d["matrix_csv"] = matrix_csv(r.report.matrix);
        d["metrics_json"] = to_json(r.report).dump();
        return d;
      },
      py::arg("config_json"), py::arg("seed") = py::none(),
      "Runs the continual task sequence described by a JSON config.");
}
