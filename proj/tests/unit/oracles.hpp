#pragma once

// Straightforward reference implementations used to cross-check the library.

#include <cmath>
#include <cstddef>
#include <vector>

#include "cbpnet/tensor.hpp"

namespace oracle {

inline double gelu(double x) {
  const double c = 0.7978845608;
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

inline std::vector<double> softmax(const std::vector<double>& v) {
  double mx = v[0];
  for (double x : v) mx = x > mx ? x : mx;
  std::vector<double> out(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) sum += out[i] = std::exp(v[i] - mx);
  for (double& x : out) x /= sum;
  return out;
}

inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t m,
                                  std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

// Single-sequence prefix attention: h is N x D, pk/pv are L x D (L may be 0),
// wqkv is D x 3D with [q | k | v] column blocks, wproj is D x D.
inline std::vector<double> prefix_attention(const std::vector<double>& h, std::size_t n, std::size_t d,
                                            const std::vector<double>& pk, const std::vector<double>& pv,
                                            std::size_t l, const std::vector<double>& wqkv,
                                            const std::vector<double>& bqkv, const std::vector<double>& wproj,
                                            const std::vector<double>& bproj, std::size_t heads) {
  std::vector<double> qkv = matmul(h, wqkv, n, d, 3 * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < 3 * d; ++j) qkv[i * 3 * d + j] += bqkv[j];
  const std::size_t hd = d / heads;
  std::vector<double> mixed(n * d, 0.0);
  for (std::size_t h_ = 0; h_ < heads; ++h_) {
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> scores;
      for (std::size_t j = 0; j < l + n; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < hd; ++c) {
          const double q = qkv[i * 3 * d + h_ * hd + c];
          const double k = j < l ? pk[j * d + h_ * hd + c] : qkv[(j - l) * 3 * d + d + h_ * hd + c];
          s += q * k;
        }
        scores.push_back(s / std::sqrt(static_cast<double>(hd)));
      }
      const auto p = softmax(scores);
      for (std::size_t j = 0; j < l + n; ++j)
        for (std::size_t c = 0; c < hd; ++c) {
          const double v = j < l ? pv[j * d + h_ * hd + c] : qkv[(j - l) * 3 * d + 2 * d + h_ * hd + c];
          mixed[i * d + h_ * hd + c] += p[j] * v;
        }
    }
  }
  std::vector<double> out = matmul(mixed, wproj, n, d, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] += bproj[j];
  return out;
}

}  // namespace oracle
