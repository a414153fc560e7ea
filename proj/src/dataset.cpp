#include "cbpnet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>
#include <string>

#include "cbpnet/errors.hpp"
#include "cbpnet/rng.hpp"
#include "cbpnet/tensor.hpp"

namespace cbpnet {

std::span<const std::uint8_t> DatasetContainer::image(std::size_t i) const {
  if (i >= count()) throw IndexError("dataset image index out of range");
  return std::span<const std::uint8_t>(pixels).subspan(i * image_bytes(), image_bytes());
}

void DatasetContainer::validate() const {
  if (count() == 0) throw DataError("dataset is empty");
  if (height == 0 || width == 0 || channels == 0) throw DataError("dataset has a zero image dimension");
  if (pixels.size() != count() * image_bytes()) {
    throw DataError("dataset pixel buffer holds " + std::to_string(pixels.size()) +
                    " bytes, expected " + std::to_string(count() * image_bytes()));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= class_count) {
      throw DataError("record " + std::to_string(i) + " has label " + std::to_string(labels[i]) +
                      " but class_count is " + std::to_string(class_count));
    }
  }
}

namespace {

constexpr std::size_t kHeaderBytes = 4 + 2 + 4 + 2 + 2 + 1 + 2;

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename T>
T get(const std::uint8_t* p) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(p[i]) << (8 * i));
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_container(const DatasetContainer& ds) {
  ds.validate();
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + ds.pixels.size() + 2 * ds.count() + 8);
  out.insert(out.end(), std::begin(kContainerMagic), std::end(kContainerMagic));
  put<std::uint16_t>(out, kContainerVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.count()));
  put<std::uint16_t>(out, ds.height);
  put<std::uint16_t>(out, ds.width);
  put<std::uint8_t>(out, ds.channels);
  put<std::uint16_t>(out, ds.class_count);
  out.insert(out.end(), ds.pixels.begin(), ds.pixels.end());
  for (std::uint16_t l : ds.labels) put<std::uint16_t>(out, l);
  put<std::uint64_t>(out, fnv1a64(out.data(), out.size()));
  return out;
}

DatasetContainer decode_container(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kContainerMagic, 4) != 0) {
    throw FormatError("dataset container: bad magic bytes");
  }
  if (bytes.size() < kHeaderBytes) throw CorruptionError("dataset container: truncated header");
  const std::uint8_t* p = bytes.data();
  const auto version = get<std::uint16_t>(p + 4);
  if (version != kContainerVersion) {
    throw FormatError("dataset container: unsupported version " + std::to_string(version));
  }
  DatasetContainer ds;
  const auto count = get<std::uint32_t>(p + 6);
  ds.height = get<std::uint16_t>(p + 10);
  ds.width = get<std::uint16_t>(p + 12);
  ds.channels = get<std::uint8_t>(p + 14);
  ds.class_count = get<std::uint16_t>(p + 15);
  const std::size_t pixel_bytes = static_cast<std::size_t>(count) * ds.image_bytes();
  const std::size_t expected = kHeaderBytes + pixel_bytes + 2 * static_cast<std::size_t>(count) + 8;
  if (bytes.size() < expected) {
    throw CorruptionError("dataset container: truncated payload (" + std::to_string(bytes.size()) +
                          " of " + std::to_string(expected) + " bytes)");
  }
  if (bytes.size() > expected) throw CorruptionError("dataset container: trailing bytes");
  const auto stored = get<std::uint64_t>(p + expected - 8);
  if (stored != fnv1a64(p, expected - 8)) throw CorruptionError("dataset container: checksum mismatch");
  ds.pixels.assign(p + kHeaderBytes, p + kHeaderBytes + pixel_bytes);
  ds.labels.resize(count);
  const std::uint8_t* lp = p + kHeaderBytes + pixel_bytes;
  for (std::size_t i = 0; i < count; ++i) ds.labels[i] = get<std::uint16_t>(lp + 2 * i);
  ds.validate();
  return ds;
}

void save_container(const DatasetContainer& ds, const std::filesystem::path& path) {
  const auto bytes = encode_container(ds);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write dataset container " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing dataset container " + path.string());
}

DatasetContainer load_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset container " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_container(bytes);
}

DatasetContainer generate_synthetic(const SyntheticSpec& spec) {
  if (spec.classes < 2) throw ConfigError("generate_synthetic: at least two classes are required");
  if (spec.per_class == 0 || spec.height == 0 || spec.width == 0 || spec.channels == 0) {
    throw ConfigError("generate_synthetic: sizes must be positive");
  }
  if (spec.classes > 0xffff || spec.height > 0xffff || spec.width > 0xffff || spec.channels > 0xff) {
    throw ConfigError("generate_synthetic: sizes exceed the container format");
  }
  constexpr std::size_t kBlobs = 3;
  struct Blob {
    double cy, cx, inv_two_sigma2;
    std::vector<double> amplitude;
  };
  Rng pattern_rng = Rng(spec.seed).derive("synthetic/patterns");
  Rng sample_rng = Rng(spec.seed).derive("synthetic/samples");
  const double h = static_cast<double>(spec.height);
  const double w = static_cast<double>(spec.width);
  const double side = std::min(h, w);

  std::vector<std::vector<Blob>> patterns(spec.classes);
  for (auto& blobs : patterns) {
    for (std::size_t b = 0; b < kBlobs; ++b) {
      Blob blob;
      blob.cy = pattern_rng.uniform(0.0, h);
      blob.cx = pattern_rng.uniform(0.0, w);
      const double sigma = side * pattern_rng.uniform(0.1, 0.3);
      blob.inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);
      for (std::size_t c = 0; c < spec.channels; ++c) blob.amplitude.push_back(pattern_rng.uniform(-100.0, 100.0));
      blobs.push_back(std::move(blob));
    }
  }

  DatasetContainer ds;
  ds.height = static_cast<std::uint16_t>(spec.height);
  ds.width = static_cast<std::uint16_t>(spec.width);
  ds.channels = static_cast<std::uint8_t>(spec.channels);
  ds.class_count = static_cast<std::uint16_t>(spec.classes);
  const std::size_t n = spec.classes * spec.per_class;
  ds.pixels.resize(n * ds.image_bytes());
  ds.labels.resize(n);
  const double jitter = side / 16.0;
  std::size_t idx = 0;
  for (std::size_t k = 0; k < spec.classes; ++k) {
    for (std::size_t s = 0; s < spec.per_class; ++s, ++idx) {
      ds.labels[idx] = static_cast<std::uint16_t>(k);
      const double dy = sample_rng.uniform(-jitter, jitter);
      const double dx = sample_rng.uniform(-jitter, jitter);
      std::uint8_t* out = ds.pixels.data() + idx * ds.image_bytes();
      for (std::size_t y = 0; y < spec.height; ++y) {
        for (std::size_t x = 0; x < spec.width; ++x) {
          for (std::size_t c = 0; c < spec.channels; ++c) {
            double v = 128.0;
            for (const Blob& blob : patterns[k]) {
              const double ry = static_cast<double>(y) + 0.5 - (blob.cy + dy);
              const double rx = static_cast<double>(x) + 0.5 - (blob.cx + dx);
              v += blob.amplitude[c] * std::exp(-(ry * ry + rx * rx) * blob.inv_two_sigma2);
            }
            v += spec.noise * sample_rng.normal();
            *out++ = static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0));
          }
        }
      }
    }
  }
  return ds;
}

DatasetContainer subset(const DatasetContainer& ds, std::span<const std::size_t> indices) {
  DatasetContainer out;
  out.height = ds.height;
  out.width = ds.width;
  out.channels = ds.channels;
  out.class_count = ds.class_count;
  out.pixels.reserve(indices.size() * ds.image_bytes());
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    const auto img = ds.image(i);
    out.pixels.insert(out.pixels.end(), img.begin(), img.end());
    out.labels.push_back(ds.labels[i]);
  }
  return out;
}

ClassIncrementalSplit split_class_incremental(const DatasetContainer& ds, std::size_t base,
                                              std::size_t tasks, std::uint64_t seed) {
  ds.validate();
  if (tasks == 0) throw ConfigError("split: at least one task is required");
  const std::size_t classes = ds.class_count;
  if (base >= classes || (classes - base) / tasks == 0) {
    throw ConfigError("split: " + std::to_string(classes) + " classes cannot hold " +
                      std::to_string(base) + " base classes plus " + std::to_string(tasks) +
                      " non-empty tasks");
  }
  const std::size_t per_task = (classes - base) / tasks;

  Rng class_rng = Rng(seed).derive("split/classes");
  Rng sample_rng = Rng(seed).derive("split/samples");
  std::vector<std::uint16_t> order(classes);
  std::iota(order.begin(), order.end(), std::uint16_t{0});
  class_rng.shuffle(std::span<std::uint16_t>(order));

  ClassIncrementalSplit split;
  split.spec.seed = seed;
  split.spec.base_classes.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(base));
  for (std::size_t t = 0; t < tasks; ++t) {
    auto first = order.begin() + static_cast<std::ptrdiff_t>(base + t * per_task);
    split.spec.task_classes.emplace_back(first, first + static_cast<std::ptrdiff_t>(per_task));
  }

  std::map<std::uint16_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < ds.count(); ++i) by_class[ds.labels[i]].push_back(i);

  auto build = [&](const std::vector<std::uint16_t>& cls) {
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> test_idx;
    for (std::uint16_t c : cls) {
      auto members = by_class[c];
      if (members.empty()) continue;
      sample_rng.shuffle(std::span<std::size_t>(members));
      const std::size_t n_test = members.size() >= 2 ? std::max<std::size_t>(1, members.size() / 5) : 0;
      test_idx.insert(test_idx.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_test));
      train_idx.insert(train_idx.end(), members.begin() + static_cast<std::ptrdiff_t>(n_test), members.end());
    }
    return TrainTest{subset(ds, train_idx), subset(ds, test_idx)};
  };
  split.base = build(split.spec.base_classes);
  for (const auto& cls : split.spec.task_classes) split.tasks.push_back(build(cls));
  return split;
}

}  // namespace cbpnet
