#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "cbpnet/checkpoint.hpp"
#include "cbpnet/dataset.hpp"
#include "cbpnet/errors.hpp"
#include "cbpnet/experiment.hpp"
#include "cbpnet/metrics.hpp"
#include "cbpnet/report.hpp"
#include "doctest.h"
#include "fixtures.hpp"
#include "json.hpp"

using namespace cbpnet;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("cbpnet_unit_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

DatasetContainer four_samples() {
  DatasetContainer ds;
  ds.height = 2;
  ds.width = 3;
  ds.channels = 2;
  ds.class_count = 10;
  for (int i = 0; i < 4 * 12; ++i) ds.pixels.push_back(static_cast<std::uint8_t>(i * 5 + 1));
  ds.labels = {0, 9, 3, 3};
  return ds;
}

AccuracyMatrix two_task_matrix() {
  AccuracyMatrix mx(2);
  mx.set(0, 0, 0.9);
  mx.set(1, 0, 0.7);
  mx.set(1, 1, 0.8);
  return mx;
}

}  // namespace

TEST_CASE("container round trip") {
  DatasetContainer ds = four_samples();
  auto bytes = encode_container(ds);
  CHECK(bytes.size() == 17 + 48 + 8 + 8);
  CHECK(decode_container(bytes) == ds);
  fs::path dir = scratch_dir("container");
  save_container(ds, dir / "c.clds");
  CHECK(load_container(dir / "c.clds") == ds);
  CHECK_THROWS_AS(load_container(dir / "missing.clds"), IoError);
}

TEST_CASE("container header layout") {
  auto bytes = encode_container(four_samples());
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "CLDS");
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 0);
  CHECK(bytes[6] == 4);  // count, little-endian u32
  CHECK(bytes[10] == 2);  // H
  CHECK(bytes[12] == 3);  // W
  CHECK(bytes[14] == 2);  // C
  CHECK(bytes[15] == 10);  // class_count
}

TEST_CASE("malformed containers") {
  auto good = encode_container(four_samples());
  SUBCASE("magic") {
    auto b = good;
    b[0] = 'X';
    CHECK_THROWS_AS(decode_container(b), FormatError);
  }
  SUBCASE("version") {
    auto b = good;
    b[4] = 2;
    CHECK_THROWS_AS(decode_container(b), FormatError);
  }
  SUBCASE("truncated") {
    auto b = good;
    b.resize(b.size() - 3);
    CHECK_THROWS_AS(decode_container(b), CorruptionError);
    b.resize(10);
    CHECK_THROWS_AS(decode_container(b), CorruptionError);
  }
  SUBCASE("flipped pixel") {
    auto b = good;
    b[20] ^= 0x40;
    CHECK_THROWS_AS(decode_container(b), CorruptionError);
  }
  SUBCASE("label out of range names the record") {
    auto b = good;
    const std::size_t label2 = 17 + 48 + 2 * 2;
    b[label2] = 10;
    b[label2 + 1] = 0;
    b.resize(b.size() - 8);
    const std::uint64_t sum = fnv1a64(b.data(), b.size());
    for (int k = 0; k < 8; ++k) b.push_back(static_cast<std::uint8_t>(sum >> (8 * k)));
    try {
      decode_container(b);
      FAIL("expected a data error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("2") != std::string::npos);
    }
  }
}

TEST_CASE("synthetic data") {
  SyntheticSpec spec{5, 7, 8, 8, 3, 30.0, 11};
  DatasetContainer a = generate_synthetic(spec);
  CHECK(a == generate_synthetic(spec));
  spec.seed = 12;
  CHECK_FALSE(a == generate_synthetic(spec));
  CHECK(a.count() == 35);
  std::vector<int> hist(5, 0);
  for (auto l : a.labels) ++hist[l];
  for (int h : hist) CHECK(h == 7);
  CHECK(a.class_count == 5);
}

TEST_CASE("a linear probe separates two synthetic classes") {
  DatasetContainer ds = generate_synthetic(SyntheticSpec{2, 100, 16, 16, 3, 40.0, 4});
  const std::size_t dim = ds.image_bytes();
  std::vector<std::size_t> train, test;
  for (std::size_t i = 0; i < ds.count(); ++i) ((i % 5 == 4) ? test : train).push_back(i);
  std::vector<double> w(dim, 0.0);
  double b = 0.0;
  auto feature = [&](std::size_t i, std::size_t k) { return ds.image(i)[k] / 127.5 - 1.0; };
  for (int epoch = 0; epoch < 200; ++epoch) {
    std::vector<double> gw(dim, 0.0);
    double gb = 0.0;
    for (std::size_t i : train) {
      double z = b;
      for (std::size_t k = 0; k < dim; ++k) z += w[k] * feature(i, k);
      const double p = 1.0 / (1.0 + std::exp(-z));
      const double err = p - (ds.labels[i] == 1 ? 1.0 : 0.0);
      for (std::size_t k = 0; k < dim; ++k) gw[k] += err * feature(i, k);
      gb += err;
    }
    for (std::size_t k = 0; k < dim; ++k) w[k] -= 0.01 * gw[k] / static_cast<double>(train.size());
    b -= 0.01 * gb / static_cast<double>(train.size());
  }
  std::size_t correct = 0;
  for (std::size_t i : test) {
    double z = b;
    for (std::size_t k = 0; k < dim; ++k) z += w[k] * feature(i, k);
    correct += (z > 0) == (ds.labels[i] == 1);
  }
  CHECK(static_cast<double>(correct) / static_cast<double>(test.size()) > 0.95);
}

TEST_CASE("class-incremental split") {
  DatasetContainer ds = generate_synthetic(SyntheticSpec{100, 10, 4, 4, 1, 10.0, 1});
  SUBCASE("100 classes into ten tasks of ten") {
    auto s = split_class_incremental(ds, 0, 10, 5);
    CHECK(s.spec.base_classes.empty());
    REQUIRE(s.spec.task_classes.size() == 10);
    std::set<std::uint16_t> seen;
    for (const auto& t : s.spec.task_classes) {
      CHECK(t.size() == 10);
      for (auto c : t) CHECK(seen.insert(c).second);
    }
    CHECK(seen.size() == 100);
    for (const auto& tt : s.tasks) {
      CHECK(tt.train.count() == 80);
      CHECK(tt.test.count() == 20);
    }
  }
  SUBCASE("base classes are disjoint from the tasks") {
    auto s = split_class_incremental(ds, 10, 6, 5);
    CHECK(s.spec.base_classes.size() == 10);
    std::set<std::uint16_t> base(s.spec.base_classes.begin(), s.spec.base_classes.end());
    for (const auto& t : s.spec.task_classes) {
      CHECK(t.size() == 15);
      for (auto c : t) CHECK(base.count(c) == 0);
    }
    for (auto l : s.base.train.labels) CHECK(base.count(l) == 1);
  }
  SUBCASE("determinism") {
    auto a = split_class_incremental(ds, 10, 9, 3);
    auto b = split_class_incremental(ds, 10, 9, 3);
    CHECK(a.spec.task_classes == b.spec.task_classes);
    CHECK(a.tasks[4].train == b.tasks[4].train);
    CHECK(a.tasks[4].test == b.tasks[4].test);
    auto c = split_class_incremental(ds, 10, 9, 4);
    CHECK(a.spec.task_classes != c.spec.task_classes);
  }
  SUBCASE("not enough classes") {
    CHECK_THROWS_AS(split_class_incremental(ds, 95, 10, 1), ConfigError);
    CHECK_THROWS_AS(split_class_incremental(ds, 101, 1, 1), ConfigError);
  }
}

TEST_CASE("metric examples") {
  AccuracyMatrix mx = two_task_matrix();
  CHECK(avg_accuracy(mx) == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(forgetting(mx) == doctest::Approx(0.2).epsilon(1e-12));

  AccuracyMatrix ones(4);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t t = 0; t <= i; ++t) ones.set(i, t, 1.0);
  CHECK(avg_accuracy(ones) == 1.0);
  CHECK(forgetting(ones) == 0.0);

  AccuracyMatrix single(1);
  single.set(0, 0, 0.42);
  CHECK(avg_accuracy(single) == 0.42);
  CHECK_THROWS_AS(forgetting(single), StateError);

  AccuracyMatrix partial(3);
  partial.set(2, 0, 0.5);
  CHECK_THROWS_AS(avg_accuracy(partial), StateError);
  CHECK_THROWS_AS(partial.set(0, 1, 0.5), IndexError);
  CHECK_THROWS_AS(partial.set(1, 0, 1.5), DataError);
  CHECK_THROWS_AS(partial.at(0, 0), StateError);
}

TEST_CASE("forgetting matches a direct computation on random matrices") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t T = 2 + rng.below(9);
    AccuracyMatrix mx(T);
    std::vector<std::vector<double>> a(T, std::vector<double>(T));
    for (std::size_t i = 0; i < T; ++i)
      for (std::size_t t = 0; t <= i; ++t) mx.set(i, t, a[i][t] = rng.uniform());
    double f = 0.0;
    for (std::size_t t = 0; t + 1 < T; ++t) {
      double best = a[t][t];
      for (std::size_t i = t; i + 1 < T; ++i) best = std::max(best, a[i][t]);
      f += best - a[T - 1][t];
    }
    CHECK(forgetting(mx) == doctest::Approx(f / static_cast<double>(T - 1)).epsilon(1e-12));
    const double avg = avg_accuracy(mx);
    CHECK(avg >= 0.0);
    CHECK(avg <= 1.0);
  }
}

TEST_CASE("forgetting is non-negative when nothing improves at the end") {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t T = 2 + rng.below(6);
    AccuracyMatrix mx(T);
    for (std::size_t i = 0; i + 1 < T; ++i)
      for (std::size_t t = 0; t <= i; ++t) mx.set(i, t, rng.uniform());
    for (std::size_t t = 0; t + 1 < T; ++t) mx.set(T - 1, t, mx.at(t, t) * rng.uniform());
    mx.set(T - 1, T - 1, rng.uniform());
    CHECK(forgetting(mx) >= 0.0);
  }
}

TEST_CASE("matrix csv") {
  AccuracyMatrix mx(3);
  Rng rng(5);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t t = 0; t <= i; ++t) mx.set(i, t, rng.uniform());
  const std::string csv = matrix_csv(mx);
  CHECK(csv.rfind("after_task,task,accuracy\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 6);
  AccuracyMatrix back = parse_matrix_csv(csv);
  CHECK(back == mx);
  CHECK(avg_accuracy(back) == avg_accuracy(mx));
  CHECK(csv.find("\n1,1,") != std::string::npos);
  CHECK_THROWS_AS(parse_matrix_csv("after,task,acc\n1,1,0.5\n"), FormatError);
  CHECK_THROWS_AS(parse_matrix_csv("after_task,task,accuracy\n1,1,zero\n"), FormatError);
}

TEST_CASE("emit_report writes consistent files") {
  MetricsReport r;
  r.variant = "cbpnet";
  r.matrix = two_task_matrix();
  r.seed = 7;
  r.config = {{"name", "x"}};
  finalize_metrics(r);
  CHECK(r.learning_curve == std::vector<double>{0.9, 0.8});
  CHECK(r.average_curve.size() == 2);
  fs::path dir = scratch_dir("report") / "nested";
  emit_report(r, dir);
  auto j = nlohmann::json::parse(read_text(dir / "metrics.json"));
  AccuracyMatrix csv = read_matrix_csv(dir / "matrix.csv");
  CHECK(std::abs(j["avg_accuracy"].get<double>() - avg_accuracy(csv)) <= 1e-12);
  CHECK(std::abs(j["forgetting"].get<double>() - forgetting(csv)) <= 1e-12);
  CHECK(j["seed"] == 7);
  CHECK(j["variant"] == "cbpnet");

  const std::string svg = read_text(dir / "curves.svg");
  CHECK(svg.rfind("<?xml", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);

  fs::path blocker = scratch_dir("report_blocked") / "file";
  write_text(blocker, "x");
  CHECK_THROWS_AS(emit_report(r, blocker / "sub"), IoError);
}

TEST_CASE("svg has one polyline per curve and escapes labels") {
  const std::string svg =
      curves_svg({{"ft-seq", {0.1, 0.2}}, {"a<b & c", {0.5, 0.4}}, {"cbpnet", {0.9, 0.8}}}, "t");
  std::size_t count = 0;
  for (std::size_t p = svg.find("<polyline"); p != std::string::npos; p = svg.find("<polyline", p + 1)) ++count;
  CHECK(count == 3);
  CHECK(svg.find("a&lt;b &amp; c") != std::string::npos);
  CHECK(svg.find("a<b") == std::string::npos);
}

TEST_CASE("checkpoint round trip and errors") {
  Rng rng(6);
  NamedTensors entries{{"a", fixture::random_tensor({2, 3}, rng)},
                       {"b/c", fixture::random_tensor({4}, rng, -1e300, 1e300)},
                       {"empty", Tensor({0, 5})}};
  auto bytes = encode_checkpoint(entries);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "CBPN");
  NamedTensors back = decode_checkpoint(bytes);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].first == entries[i].first);
    CHECK(back[i].second.shape() == entries[i].second.shape());
    CHECK(checksum(back[i].second) == checksum(entries[i].second));
  }
  auto bad_magic = bytes;
  bad_magic[1] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad_magic), FormatError);
  auto bad_version = bytes;
  bad_version[4] = 9;
  CHECK_THROWS_AS(decode_checkpoint(bad_version), FormatError);
  auto flipped = bytes;
  flipped[30] ^= 1;
  CHECK_THROWS_AS(decode_checkpoint(flipped), CorruptionError);
  auto cut = bytes;
  cut.resize(cut.size() / 2);
  CHECK_THROWS_AS(decode_checkpoint(cut), CorruptionError);
}

TEST_CASE("backbone checkpoint restores the exact weights") {
  Rng rng(7);
  Backbone b(fixture::small_backbone(), rng);
  fs::path dir = scratch_dir("ckpt");
  save_backbone(b, dir / "b.cbpn");
  Backbone back = load_backbone(fixture::small_backbone(), dir / "b.cbpn");
  CHECK(back.checksum() == b.checksum());
  CHECK(back.frozen());

  BackboneConfig other = fixture::small_backbone();
  other.dim = 4;
  CHECK_THROWS_AS(load_backbone(other, dir / "b.cbpn"), ShapeError);
  NamedTensors partial = snapshot(b.parameters());
  partial.pop_back();
  CHECK_THROWS_AS(restore(b.parameters(), partial), FormatError);
}

TEST_CASE("per-task checkpoints resume the block state") {
  ExperimentConfig cfg = fixture::small_experiment();
  cfg.train.epochs = 1;
  cfg.checkpoint_dir = scratch_dir("tasks").string();
  PreparedData data = prepare_data(cfg);
  auto pre = pretrain(cfg, data);
  run_sequence(cfg, data, pre.backbone);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(cfg.checkpoint_dir)) files += e.path().extension() == ".cbpn";
  CHECK(files == cfg.data.tasks);
  NamedTensors last = load_checkpoint(fs::path(cfg.checkpoint_dir) / "cbpnet-task4.cbpn");
  bool has_utility = false, has_key = false;
  for (const auto& [name, t] : last) {
    has_utility = has_utility || name == "cbp_state/utility";
    has_key = has_key || name == "e_key/3";
  }
  CHECK(has_utility);
  CHECK(has_key);
}

TEST_CASE("ablation shares the split and the pretrained backbone") {
  ExperimentConfig cfg = fixture::small_experiment();
  cfg.train.epochs = 1;
  cfg.data.tasks = 2;
  cfg.data.classes = 12;
  auto runs = ablate(cfg);
  REQUIRE(runs.size() == 4);
  std::set<std::string> names;
  for (const auto& r : runs) {
    names.insert(r.report.variant);
    CHECK(r.initial_checksum == runs[0].initial_checksum);
    CHECK(r.report.config["data"] == runs[0].report.config["data"]);
    CHECK(r.report.seed == runs[0].report.seed);
  }
  CHECK(names == std::set<std::string>{"ft-seq", "ft-seq+cbp", "dualprompt", "cbpnet"});
}

TEST_CASE("plasticity probe") {
  ExperimentConfig cfg = fixture::small_experiment();
  cfg.train.epochs = 1;
  cfg.data.classes = 26;
  cfg.data.per_class = 5;
  cfg.data.base = 4;
  cfg.data.tasks = 11;
  ProbeResult p = plasticity_probe(cfg);
  REQUIRE(p.curves.size() == 2);
  CHECK(p.curves[0].values.size() == 11);
  CHECK(p.curves[1].values.size() == 11);
  CHECK(p.cbp_on.initial_checksum == p.cbp_off.initial_checksum);
  CHECK(p.cbp_on.report.matrix.diagonal() == p.curves[0].values);

  cfg.data.tasks = 9;
  CHECK_THROWS_AS(plasticity_probe(cfg), ConfigError);
}
