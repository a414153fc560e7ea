#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cbpnet/tensor.hpp"

namespace cbpnet {

inline constexpr char kCheckpointMagic[4] = {'C', 'B', 'P', 'N'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// Magic "CBPN", u16 version, then per entry: u32 name length, name bytes,
/// u32 rank, u64 dims, little-endian f64 values; then a u64 FNV-1a checksum
/// of everything before it.
std::vector<std::uint8_t> encode_checkpoint(const NamedTensors& entries);
/// FormatError on bad magic or version, CorruptionError on truncation or a
/// checksum mismatch.
NamedTensors decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const NamedTensors& entries, const std::filesystem::path& path);
NamedTensors load_checkpoint(const std::filesystem::path& path);

/// Snapshot of named parameters (values only).
NamedTensors snapshot(const std::vector<std::pair<std::string, Tensor*>>& params);
/// Copies values into `params` by name. FormatError for a missing entry,
/// ShapeError for a shape mismatch.
void restore(const std::vector<std::pair<std::string, Tensor*>>& params, const NamedTensors& entries);

}  // namespace cbpnet
