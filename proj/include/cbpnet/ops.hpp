#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "cbpnet/rng.hpp"
#include "cbpnet/tensor.hpp"

namespace cbpnet {

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

inline constexpr double kGeluCoeff = 0.7978845608;  // sqrt(2/pi), truncated
inline constexpr double kGeluCubic = 0.044715;

/// Tanh-approximated GELU.
double gelu(double x);
double gelu_derivative(double x);
/// Elementwise GELU. Throws NumericDomainError on non-finite input.
Tensor gelu(const Tensor& x);

/// Max-subtracted softmax. Throws ShapeError on an empty input and
/// NumericDomainError on non-finite entries.
std::vector<double> softmax(std::span<const double> v);
/// In-place variant used on hot paths; no validation.
void softmax_inplace(std::span<double> v);

// ---------------------------------------------------------------------------
// Layer normalization over the last dimension
// ---------------------------------------------------------------------------

struct LayerNormCache {
  std::vector<double> xhat;  // rows x cols
  std::vector<double> rstd;  // rows
};

/// y = gamma * (x - mean) / sqrt(var + eps) + beta, per row.
/// eps < 0 is a ConfigError; eps == 0 is allowed as long as no row is constant.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                  LayerNormCache* cache = nullptr);

/// Returns dx; accumulates into gamma/beta gradients when they are trainable.
Tensor layer_norm_backward(const Tensor& dy, const LayerNormCache& cache, Tensor& gamma,
                           Tensor& beta);

// ---------------------------------------------------------------------------
// Dense products on row-major buffers (Eigen-backed)
// ---------------------------------------------------------------------------

/// c(m x n) (+)= a(m x k) * b(k x n)
void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
          std::size_t n, bool accumulate = false);
/// c(m x n) (+)= a(m x k) * b(n x k)^T
void gemm_bt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate = false);
/// c(k x n) (+)= a(m x k)^T * b(m x n)
void gemm_at(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate = false);

/// y = x * w + bias over the rows of x. w is (in x out).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);
/// Backward of `linear`: returns dx (unless skip_input) and accumulates
/// w/bias gradients when those tensors are trainable.
Tensor linear_backward(const Tensor& dy, const Tensor& x, Tensor& w, Tensor& bias,
                       bool skip_input = false);

// ---------------------------------------------------------------------------
// Finite-difference oracle
// ---------------------------------------------------------------------------

/// Scalar objective. When `grad` is non-null it receives the analytic gradient
/// (same size as theta).
using ScalarObjective = std::function<double(const Tensor& theta, Tensor* grad)>;

/// max_i |analytic_i - central_i| / max(1, |analytic_i|)
/// h must lie in (0, 1e-2]. Throws NumericDomainError if f(theta) is not finite.
double grad_check(const ScalarObjective& f, const Tensor& theta, double h = 1e-5);

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

enum class InitKind { UniformFanIn, NormalScaled };

struct InitSpec {
  InitKind kind = InitKind::UniformFanIn;
  double gain = 1.0;

  /// Half-width of the uniform support (uniform kind) or standard deviation.
  double scale(std::size_t fan_in) const;
};

/// `count` i.i.d. draws from `init` for a layer with the given fan-in.
std::vector<double> sample(const InitSpec& init, Rng& rng, std::size_t fan_in,
                           std::size_t count);

void fill_uniform(Tensor& t, Rng& rng, double lo, double hi);
void fill_init(Tensor& t, const InitSpec& init, Rng& rng, std::size_t fan_in);

}  // namespace cbpnet
