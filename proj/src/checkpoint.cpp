#include "cbpnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "cbpnet/errors.hpp"

namespace cbpnet {

namespace {

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(data_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return v;
  }
  std::string text(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return size_ - pos_; }

 private:
  void need(std::size_t n) const {
    if (n > size_ - pos_) throw CorruptionError("checkpoint: truncated entry");
  }
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const NamedTensors& entries) {
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put<std::uint16_t>(out, kCheckpointVersion);
  for (const auto& [name, t] : entries) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
    for (double v : t.values()) put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  put<std::uint64_t>(out, fnv1a64(out.data(), out.size()));
  return out;
}

NamedTensors decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw FormatError("checkpoint: bad magic bytes");
  }
  if (bytes.size() < 6 + 8) throw CorruptionError("checkpoint: truncated header");
  Reader header(bytes.data() + 4, 2);
  const auto version = header.get<std::uint16_t>();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  const std::size_t body_end = bytes.size() - 8;
  Reader tail(bytes.data() + body_end, 8);
  if (tail.get<std::uint64_t>() != fnv1a64(bytes.data(), body_end)) {
    throw CorruptionError("checkpoint: checksum mismatch");
  }
  Reader r(bytes.data() + 6, body_end - 6);
  NamedTensors entries;
  while (r.remaining() > 0) {
    const auto name_len = r.get<std::uint32_t>();
    std::string name = r.text(name_len);
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw CorruptionError("checkpoint: implausible rank for " + name);
    Shape shape(rank);
    std::size_t count = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(r.get<std::uint64_t>());
      if (d != 0 && count > r.remaining() / d) throw CorruptionError("checkpoint: truncated entry " + name);
      count *= d;
    }
    if (count > r.remaining() / 8) throw CorruptionError("checkpoint: truncated entry " + name);
    std::vector<double> values(count);
    for (auto& v : values) v = std::bit_cast<double>(r.get<std::uint64_t>());
    entries.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  return entries;
}

void save_checkpoint(const NamedTensors& entries, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(entries);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

NamedTensors load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

NamedTensors snapshot(const std::vector<std::pair<std::string, Tensor*>>& params) {
  NamedTensors out;
  out.reserve(params.size());
  for (const auto& [name, t] : params) out.emplace_back(name, Tensor(t->shape(), std::vector<double>(t->values().begin(), t->values().end())));
  return out;
}

void restore(const std::vector<std::pair<std::string, Tensor*>>& params, const NamedTensors& entries) {
  std::map<std::string, const Tensor*> index;
  for (const auto& [name, t] : entries) index[name] = &t;
  for (const auto& [name, t] : params) {
    auto it = index.find(name);
    if (it == index.end()) throw FormatError("checkpoint: missing entry " + name);
    if (it->second->shape() != t->shape()) {
      throw ShapeError("checkpoint: entry " + name + " has shape " + shape_string(it->second->shape()) +
                       ", expected " + shape_string(t->shape()));
    }
    std::copy(it->second->data(), it->second->data() + t->size(), t->data());
  }
}

}  // namespace cbpnet
