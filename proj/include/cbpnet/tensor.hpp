#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cbpnet {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles. A trainable tensor owns a gradient
/// buffer of the same shape; a non-trainable one owns none.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, bool trainable = false);
  Tensor(Shape shape, std::vector<double> values, bool trainable = false);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  /// Product of all leading dimensions; a rank-1 tensor is a single row.
  std::size_t rows() const noexcept;
  /// Size of the last dimension.
  std::size_t cols() const noexcept;

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::span<double> row(std::size_t r);
  std::span<const double> row(std::size_t r) const;

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c);
  double at(std::size_t r, std::size_t c) const;

  bool trainable() const noexcept { return trainable_; }
  /// Allocates a zeroed gradient buffer when enabling, releases it when disabling.
  void set_trainable(bool trainable);
  std::span<double> grad();
  std::span<const double> grad() const;
  void zero_grad();

  void fill(double value);
  bool all_finite() const;
  /// Same values under a new shape of equal size; the copy is not trainable.
  Tensor reshaped(Shape shape) const;

 private:
  Shape shape_;
  std::vector<double> data_;
  std::vector<double> grad_;
  bool trainable_ = false;
};

/// FNV-1a over raw bytes.
std::uint64_t fnv1a64(const void* bytes, std::size_t length,
                      std::uint64_t seed = 0xcbf29ce484222325ULL);
/// Checksum of a tensor's shape and value bytes.
std::uint64_t checksum(const Tensor& t, std::uint64_t seed = 0xcbf29ce484222325ULL);

/// Throws ShapeError when `t` does not have exactly `expected` shape.
void require_shape(const Tensor& t, const Shape& expected, const char* what);

}  // namespace cbpnet
