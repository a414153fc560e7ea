#include "cbpnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cbpnet/errors.hpp"

namespace cbpnet {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor() : shape_{0} {}

Tensor::Tensor(Shape shape, bool trainable)
    : shape_(std::move(shape)), data_(shape_size(shape_), 0.0) {
  if (shape_.empty()) throw ShapeError("tensor shape must have at least one dimension");
  set_trainable(trainable);
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool trainable)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (shape_.empty()) throw ShapeError("tensor shape must have at least one dimension");
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("tensor shape " + shape_string(shape_) + " does not match " +
                     std::to_string(data_.size()) + " values");
  }
  set_trainable(trainable);
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_string(shape_));
  }
  return shape_[axis];
}

std::size_t Tensor::rows() const noexcept {
  std::size_t n = 1;
  for (std::size_t i = 0; i + 1 < shape_.size(); ++i) n *= shape_[i];
  return n;
}

std::size_t Tensor::cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }

std::span<double> Tensor::row(std::size_t r) {
  return std::span<double>(data_).subspan(r * cols(), cols());
}

std::span<const double> Tensor::row(std::size_t r) const {
  return std::span<const double>(data_).subspan(r * cols(), cols());
}

double& Tensor::at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
double Tensor::at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

void Tensor::set_trainable(bool trainable) {
  trainable_ = trainable;
  if (trainable) {
    grad_.assign(data_.size(), 0.0);
  } else {
    grad_.clear();
    grad_.shrink_to_fit();
  }
}

std::span<double> Tensor::grad() {
  if (!trainable_) throw StateError("gradient requested for a non-trainable tensor");
  return grad_;
}

std::span<const double> Tensor::grad() const {
  if (!trainable_) throw StateError("gradient requested for a non-trainable tensor");
  return grad_;
}

void Tensor::zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

std::uint64_t fnv1a64(const void* bytes, std::size_t length, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < length; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t checksum(const Tensor& t, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (std::size_t d : t.shape()) {
    const std::uint64_t d64 = d;
    h = fnv1a64(&d64, sizeof d64, h);
  }
  return fnv1a64(t.data(), t.size() * sizeof(double), h);
}

void require_shape(const Tensor& t, const Shape& expected, const char* what) {
  if (t.shape() != expected) {
    throw ShapeError(std::string(what) + ": expected shape " + shape_string(expected) +
                     ", got " + shape_string(t.shape()));
  }
}

}  // namespace cbpnet
