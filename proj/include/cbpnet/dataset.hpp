#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace cbpnet {

inline constexpr char kContainerMagic[4] = {'C', 'L', 'D', 'S'};
inline constexpr std::uint16_t kContainerVersion = 1;

/// Labeled u8 images, row-major count x H x W x C.
struct DatasetContainer {
  std::uint16_t height = 0;
  std::uint16_t width = 0;
  std::uint8_t channels = 0;
  std::uint16_t class_count = 0;
  std::vector<std::uint8_t> pixels;
  std::vector<std::uint16_t> labels;

  std::size_t count() const noexcept { return labels.size(); }
  std::size_t image_bytes() const noexcept {
    return static_cast<std::size_t>(height) * width * channels;
  }
  std::span<const std::uint8_t> image(std::size_t i) const;

  /// Throws DataError on empty data, size mismatches or out-of-range labels.
  void validate() const;
  bool operator==(const DatasetContainer&) const = default;
};

/// Binary little-endian container: magic "CLDS", u16 version, u32 count,
/// u16 H, u16 W, u8 C, u16 class_count, pixels, u16 labels, u64 FNV-1a
/// checksum of all preceding bytes.
std::vector<std::uint8_t> encode_container(const DatasetContainer& ds);
/// FormatError on bad magic/version, CorruptionError on truncation or a bad
/// checksum, DataError on out-of-range labels.
DatasetContainer decode_container(std::span<const std::uint8_t> bytes);

void save_container(const DatasetContainer& ds, const std::filesystem::path& path);
DatasetContainer load_container(const std::filesystem::path& path);

struct SyntheticSpec {
  std::size_t classes = 10;
  std::size_t per_class = 50;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 3;
  double noise = 40.0;  // pixel-level standard deviation shared by all classes
  std::uint64_t seed = 0;
};

/// Class-conditional Gaussian-blob images, class-major order.
DatasetContainer generate_synthetic(const SyntheticSpec& spec);

DatasetContainer subset(const DatasetContainer& ds, std::span<const std::size_t> indices);

struct SplitSpec {
  std::vector<std::uint16_t> base_classes;
  std::vector<std::vector<std::uint16_t>> task_classes;
  std::uint64_t seed = 0;
};

struct TrainTest {
  DatasetContainer train;
  DatasetContainer test;
};

struct ClassIncrementalSplit {
  SplitSpec spec;
  TrainTest base;
  std::vector<TrainTest> tasks;
};

/// Permutes classes by seed, assigns the first `base` to pretraining and
/// partitions the next tasks * k into equal disjoint tasks, with
/// k = (class_count - base) / tasks. Each class is split 80/20 into
/// train/test by a seeded shuffle. ConfigError if k would be zero.
ClassIncrementalSplit split_class_incremental(const DatasetContainer& ds, std::size_t base,
                                              std::size_t tasks, std::uint64_t seed);

}  // namespace cbpnet
