#pragma once

#include <cstddef>
#include <vector>

namespace cbpnet {

/// a[i][t]: accuracy on task t after training through task i, for t <= i.
/// Indices are zero-based.
class AccuracyMatrix {
 public:
  AccuracyMatrix() = default;
  explicit AccuracyMatrix(std::size_t tasks);

  std::size_t tasks() const noexcept { return tasks_; }
  /// IndexError when t > i or out of range; DataError outside [0, 1].
  void set(std::size_t i, std::size_t t, double accuracy);
  bool filled(std::size_t i, std::size_t t) const;
  double at(std::size_t i, std::size_t t) const;
  bool row_complete(std::size_t i) const;
  std::size_t filled_count() const;

  /// a[i][i] for every trained task.
  std::vector<double> diagonal() const;
  /// Mean of row i over t <= i, for every complete row.
  std::vector<double> running_average() const;

  bool operator==(const AccuracyMatrix& other) const;

 private:
  std::size_t index(std::size_t i, std::size_t t) const;

  std::size_t tasks_ = 0;
  std::vector<double> cells_;  // row-major T x T, NaN when unset
};

/// Mean of the final row. StateError if that row is incomplete.
double avg_accuracy(const AccuracyMatrix& mx);
/// Mean over t < T-1 of (best earlier accuracy on t) - (final accuracy on t).
/// StateError when fewer than two tasks or the matrix is incomplete.
double forgetting(const AccuracyMatrix& mx);

}  // namespace cbpnet
