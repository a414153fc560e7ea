#include "cbpnet/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "cbpnet/errors.hpp"

namespace cbpnet {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

}  // namespace

double gelu(double x) {
  const double inner = kGeluCoeff * (x + kGeluCubic * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(inner));
}

double gelu_derivative(double x) {
  const double inner = kGeluCoeff * (x + kGeluCubic * x * x * x);
  const double t = std::tanh(inner);
  const double dinner = kGeluCoeff * (1.0 + 3.0 * kGeluCubic * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
}

Tensor gelu(const Tensor& x) {
  if (!x.all_finite()) throw NumericDomainError("gelu: non-finite input");
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = gelu(x[i]);
  return y;
}

std::vector<double> softmax(std::span<const double> v) {
  if (v.empty()) throw ShapeError("softmax: empty vector");
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericDomainError("softmax: non-finite input");
  }
  std::vector<double> out(v.begin(), v.end());
  softmax_inplace(out);
  return out;
}

void softmax_inplace(std::span<double> v) {
  const double mx = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double& x : v) {
    x = std::exp(x - mx);
    sum += x;
  }
  const double inv = 1.0 / sum;
  for (double& x : v) x *= inv;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                  LayerNormCache* cache) {
  if (!(eps >= 0.0)) throw ConfigError("layer_norm: eps must be non-negative");
  const std::size_t rows = x.rows();
  const std::size_t cols = x.cols();
  if (gamma.size() != cols || beta.size() != cols) {
    throw ShapeError("layer_norm: gamma/beta size must equal the last dimension " +
                     std::to_string(cols));
  }
  Tensor y(x.shape());
  if (cache) {
    cache->xhat.resize(rows * cols);
    cache->rstd.resize(rows);
  }
  const double inv_n = 1.0 / static_cast<double>(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * cols;
    double mean = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mean += xr[c];
    mean *= inv_n;
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double d = xr[c] - mean;
      var += d * d;
    }
    var *= inv_n;
    const double denom = var + eps;
    if (!(denom > 0.0)) {
      throw NumericDomainError("layer_norm: zero variance row " + std::to_string(r) +
                               " with eps = 0");
    }
    const double rstd = 1.0 / std::sqrt(denom);
    double* yr = y.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) {
      const double xh = (xr[c] - mean) * rstd;
      if (cache) cache->xhat[r * cols + c] = xh;
      yr[c] = gamma[c] * xh + beta[c];
    }
    if (cache) cache->rstd[r] = rstd;
  }
  return y;
}

Tensor layer_norm_backward(const Tensor& dy, const LayerNormCache& cache, Tensor& gamma,
                           Tensor& beta) {
  const std::size_t rows = dy.rows();
  const std::size_t cols = dy.cols();
  Tensor dx(dy.shape());
  const bool train_affine = gamma.trainable();
  std::span<double> dgamma = train_affine ? gamma.grad() : std::span<double>{};
  std::span<double> dbeta = beta.trainable() ? beta.grad() : std::span<double>{};
  const double inv_n = 1.0 / static_cast<double>(cols);
  std::vector<double> dxhat(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* g = dy.data() + r * cols;
    const double* xh = cache.xhat.data() + r * cols;
    double mean_d = 0.0;
    double mean_dx = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      dxhat[c] = g[c] * gamma[c];
      mean_d += dxhat[c];
      mean_dx += dxhat[c] * xh[c];
      if (!dgamma.empty()) dgamma[c] += g[c] * xh[c];
      if (!dbeta.empty()) dbeta[c] += g[c];
    }
    mean_d *= inv_n;
    mean_dx *= inv_n;
    double* out = dx.data() + r * cols;
    const double rstd = cache.rstd[r];
    for (std::size_t c = 0; c < cols; ++c) {
      out[c] = rstd * (dxhat[c] - mean_d - xh[c] * mean_dx);
    }
  }
  return dx;
}

void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
          std::size_t n, bool accumulate) {
  MutMap cm(c, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate) cm.setZero();
    return;
  }
  ConstMap am(a, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
  ConstMap bm(b, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
  if (accumulate) {
    cm.noalias() += am * bm;
  } else {
    cm.noalias() = am * bm;
  }
}

void gemm_bt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  MutMap cm(c, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate) cm.setZero();
    return;
  }
  ConstMap am(a, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
  ConstMap bm(b, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
  if (accumulate) {
    cm.noalias() += am * bm.transpose();
  } else {
    cm.noalias() = am * bm.transpose();
  }
}

void gemm_at(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  MutMap cm(c, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
  if (k == 0 || n == 0) return;
  if (m == 0) {
    if (!accumulate) cm.setZero();
    return;
  }
  ConstMap am(a, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
  ConstMap bm(b, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  if (accumulate) {
    cm.noalias() += am.transpose() * bm;
  } else {
    cm.noalias() = am.transpose() * bm;
  }
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  const std::size_t in = w.dim(0);
  const std::size_t out = w.dim(1);
  if (x.cols() != in) {
    throw ShapeError("linear: input width " + std::to_string(x.cols()) +
                     " does not match weight " + shape_string(w.shape()));
  }
  if (bias.size() != out) throw ShapeError("linear: bias size mismatch");
  Shape shape = x.shape();
  shape.back() = out;
  Tensor y(shape);
  const std::size_t rows = x.rows();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(bias.data(), bias.data() + out, y.data() + r * out);
  }
  gemm(x.data(), w.data(), y.data(), rows, in, out, true);
  return y;
}

Tensor linear_backward(const Tensor& dy, const Tensor& x, Tensor& w, Tensor& bias,
                       bool skip_input) {
  const std::size_t in = w.dim(0);
  const std::size_t out = w.dim(1);
  const std::size_t rows = x.rows();
  if (w.trainable()) gemm_at(x.data(), dy.data(), w.grad().data(), rows, in, out, true);
  if (bias.trainable()) {
    auto db = bias.grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* g = dy.data() + r * out;
      for (std::size_t c = 0; c < out; ++c) db[c] += g[c];
    }
  }
  if (skip_input) return Tensor();
  Tensor dx(x.shape());
  gemm_bt(dy.data(), w.data(), dx.data(), rows, out, in, false);
  return dx;
}

double grad_check(const ScalarObjective& f, const Tensor& theta, double h) {
  if (!(h > 0.0 && h <= 1e-2)) throw ConfigError("grad_check: h must lie in (0, 1e-2]");
  Tensor analytic(theta.shape());
  Tensor point = theta.reshaped(theta.shape());
  const double f0 = f(point, &analytic);
  if (!std::isfinite(f0)) throw NumericDomainError("grad_check: f(theta) is not finite");
  double worst = 0.0;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double saved = point[i];
    point[i] = saved + h;
    const double fp = f(point, nullptr);
    point[i] = saved - h;
    const double fm = f(point, nullptr);
    point[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericDomainError("grad_check: objective became non-finite at coordinate " +
                               std::to_string(i));
    }
    const double numeric = (fp - fm) / (2.0 * h);
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

double InitSpec::scale(std::size_t fan_in) const {
  return gain * std::sqrt(1.0 / static_cast<double>(fan_in));
}

std::vector<double> sample(const InitSpec& init, Rng& rng, std::size_t fan_in,
                           std::size_t count) {
  if (fan_in == 0) throw ConfigError("sample: fan_in must be at least 1");
  const double s = init.scale(fan_in);
  std::vector<double> out(count);
  for (double& v : out) {
    v = init.kind == InitKind::UniformFanIn ? rng.uniform(-s, s) : s * rng.normal();
  }
  return out;
}

void fill_uniform(Tensor& t, Rng& rng, double lo, double hi) {
  for (double& v : t.values()) v = rng.uniform(lo, hi);
}

void fill_init(Tensor& t, const InitSpec& init, Rng& rng, std::size_t fan_in) {
  const auto draws = sample(init, rng, fan_in, t.size());
  std::copy(draws.begin(), draws.end(), t.data());
}

}  // namespace cbpnet
