#include "cbpnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "cbpnet/errors.hpp"

namespace cbpnet {

AccuracyMatrix::AccuracyMatrix(std::size_t tasks)
    : tasks_(tasks), cells_(tasks * tasks, std::numeric_limits<double>::quiet_NaN()) {}

std::size_t AccuracyMatrix::index(std::size_t i, std::size_t t) const {
  if (i >= tasks_ || t > i) {
    throw IndexError("accuracy matrix cell (" + std::to_string(i) + ", " + std::to_string(t) +
                     ") outside the lower triangle of " + std::to_string(tasks_) + " tasks");
  }
  return i * tasks_ + t;
}

void AccuracyMatrix::set(std::size_t i, std::size_t t, double accuracy) {
  if (!(accuracy >= 0.0 && accuracy <= 1.0)) {
    throw DataError("accuracy " + std::to_string(accuracy) + " outside [0, 1]");
  }
  cells_[index(i, t)] = accuracy;
}

bool AccuracyMatrix::filled(std::size_t i, std::size_t t) const {
  if (i < tasks_ && t > i && t < tasks_) return false;
  return !std::isnan(cells_[index(i, t)]);
}

double AccuracyMatrix::at(std::size_t i, std::size_t t) const {
  const double v = cells_[index(i, t)];
  if (std::isnan(v)) {
    throw StateError("accuracy matrix cell (" + std::to_string(i) + ", " + std::to_string(t) +
                     ") is not filled");
  }
  return v;
}

bool AccuracyMatrix::row_complete(std::size_t i) const {
  for (std::size_t t = 0; t <= i; ++t) {
    if (!filled(i, t)) return false;
  }
  return true;
}

std::size_t AccuracyMatrix::filled_count() const {
  return static_cast<std::size_t>(
      std::count_if(cells_.begin(), cells_.end(), [](double v) { return !std::isnan(v); }));
}

std::vector<double> AccuracyMatrix::diagonal() const {
  std::vector<double> out;
  for (std::size_t i = 0; i < tasks_ && filled(i, i); ++i) out.push_back(at(i, i));
  return out;
}

std::vector<double> AccuracyMatrix::running_average() const {
  std::vector<double> out;
  for (std::size_t i = 0; i < tasks_ && row_complete(i); ++i) {
    double sum = 0.0;
    for (std::size_t t = 0; t <= i; ++t) sum += at(i, t);
    out.push_back(sum / static_cast<double>(i + 1));
  }
  return out;
}

bool AccuracyMatrix::operator==(const AccuracyMatrix& other) const {
  if (tasks_ != other.tasks_) return false;
  for (std::size_t k = 0; k < cells_.size(); ++k) {
    const bool a = std::isnan(cells_[k]);
    const bool b = std::isnan(other.cells_[k]);
    if (a != b || (!a && cells_[k] != other.cells_[k])) return false;
  }
  return true;
}

double avg_accuracy(const AccuracyMatrix& mx) {
  if (mx.tasks() == 0 || !mx.row_complete(mx.tasks() - 1)) {
    throw StateError("avg_accuracy: the final row is incomplete");
  }
  const std::size_t last = mx.tasks() - 1;
  double sum = 0.0;
  for (std::size_t t = 0; t <= last; ++t) sum += mx.at(last, t);
  return sum / static_cast<double>(mx.tasks());
}

double forgetting(const AccuracyMatrix& mx) {
  const std::size_t n = mx.tasks();
  if (n < 2) throw StateError("forgetting needs at least two tasks");
  const std::size_t last = n - 1;
  double sum = 0.0;
  for (std::size_t t = 0; t < last; ++t) {
    double best = mx.at(t, t);
    for (std::size_t i = t + 1; i < last; ++i) best = std::max(best, mx.at(i, t));
    sum += best - mx.at(last, t);
  }
  return sum / static_cast<double>(last);
}

}  // namespace cbpnet
