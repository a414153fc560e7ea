#include <cmath>
#include <limits>
#include <numeric>

#include "cbpnet/errors.hpp"
#include "cbpnet/ops.hpp"
#include "cbpnet/rng.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace cbpnet;

TEST_CASE("gelu values and asymptotes") {
  CHECK(gelu(0.0) == 0.0);
  CHECK(gelu(10.0) == doctest::Approx(10.0).epsilon(1e-4));
  CHECK(std::abs(gelu(10.0) - 10.0) < 1e-3);
  CHECK(std::abs(gelu(-10.0)) < 1e-3);
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const double x = rng.uniform(-6.0, 6.0);
    CHECK(gelu(x) == doctest::Approx(oracle::gelu(x)).epsilon(1e-14));
  }
}

TEST_CASE("gelu tensor rejects non-finite input") {
  Tensor x({3}, std::vector<double>{0.0, std::numeric_limits<double>::quiet_NaN(), 1.0});
  CHECK_THROWS_AS(gelu(x), NumericDomainError);
  Tensor y({2}, std::vector<double>{1.0, std::numeric_limits<double>::infinity()});
  CHECK_THROWS_AS(gelu(y), NumericDomainError);
}

TEST_CASE("gelu derivative matches central differences at random points") {
  Rng rng(11);
  for (int i = 0; i < 100; ++i) {
    const double x = rng.uniform(-5.0, 5.0);
    const double h = 1e-5;
    const double fd = (gelu(x + h) - gelu(x - h)) / (2 * h);
    CHECK(std::abs(gelu_derivative(x) - fd) / std::max(1.0, std::abs(fd)) < 1e-4);
  }
}

TEST_CASE("softmax examples") {
  auto p = softmax(std::vector<double>{0.0, 0.0});
  CHECK(p[0] == doctest::Approx(0.5));
  CHECK(p[1] == doctest::Approx(0.5));

  auto q = softmax(std::vector<double>{std::log(1.0), std::log(2.0), std::log(3.0)});
  CHECK(q[0] == doctest::Approx(1.0 / 6).epsilon(1e-12));
  CHECK(q[1] == doctest::Approx(2.0 / 6).epsilon(1e-12));
  CHECK(q[2] == doctest::Approx(3.0 / 6).epsilon(1e-12));

  CHECK_THROWS_AS(softmax(std::vector<double>{}), ShapeError);
  CHECK_THROWS_AS(softmax(std::vector<double>{1.0, std::nan("")}), NumericDomainError);
}

TEST_CASE("softmax shift invariance and normalization") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> v(1 + rng.below(20));
    for (double& x : v) x = rng.uniform(-50.0, 50.0);
    const double c = rng.uniform(-30.0, 30.0);
    std::vector<double> shifted(v);
    for (double& x : shifted) x += c;
    const auto a = softmax(v);
    const auto b = softmax(shifted);
    const auto ref = oracle::softmax(v);
    double sum = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      CHECK(a[i] >= 0.0);
      CHECK(std::abs(a[i] - b[i]) <= 1e-12);
      CHECK(std::abs(a[i] - ref[i]) <= 1e-12);
      sum += a[i];
    }
    CHECK(std::abs(sum - 1.0) <= 1e-9);
  }
}

TEST_CASE("layer norm examples") {
  Tensor gamma({2}, std::vector<double>{1.0, 1.0});
  Tensor beta({2}, std::vector<double>{0.0, 0.0});

  SUBCASE("already normalized row with eps = 0") {
    Tensor x({1, 2}, std::vector<double>{1.0, -1.0});
    Tensor y = layer_norm(x, gamma, beta, 0.0);
    CHECK(y[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(y[1] == doctest::Approx(-1.0).epsilon(1e-15));
  }
  SUBCASE("constant row maps to zeros with positive eps") {
    Tensor x({1, 2}, std::vector<double>{3.0, 3.0});
    Tensor y = layer_norm(x, gamma, beta, 1e-6);
    CHECK(y[0] == 0.0);
    CHECK(y[1] == 0.0);
  }
  SUBCASE("constant row with eps = 0 has no defined scale") {
    Tensor x({1, 2}, std::vector<double>{3.0, 3.0});
    CHECK_THROWS_AS(layer_norm(x, gamma, beta, 0.0), NumericDomainError);
  }
  SUBCASE("gamma = 0 leaves only beta") {
    Tensor x({2, 2}, std::vector<double>{1.0, 4.0, -2.0, 7.0});
    Tensor g0({2});
    Tensor b5({2}, std::vector<double>{5.0, 5.0});
    Tensor y = layer_norm(x, g0, b5, 1e-6);
    for (double v : y.values()) CHECK(v == 5.0);
  }
  SUBCASE("negative eps is a config error") {
    Tensor x({1, 2}, std::vector<double>{1.0, 2.0});
    CHECK_THROWS_AS(layer_norm(x, gamma, beta, -1e-6), ConfigError);
  }
  SUBCASE("mismatched affine size") {
    Tensor x({1, 3}, std::vector<double>{1.0, 2.0, 3.0});
    CHECK_THROWS_AS(layer_norm(x, gamma, beta, 1e-6), ShapeError);
  }
}

TEST_CASE("layer norm rows have zero mean and unit variance") {
  Rng rng(17);
  Tensor x({8, 13});
  for (double& v : x.values()) v = rng.uniform(-4.0, 9.0);
  Tensor g({13});
  g.fill(1.0);
  Tensor b({13});
  Tensor y = layer_norm(x, g, b, 0.0);
  for (std::size_t r = 0; r < 8; ++r) {
    auto row = y.row(r);
    const double mean = std::accumulate(row.begin(), row.end(), 0.0) / 13.0;
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    CHECK(std::abs(mean) < 1e-12);
    CHECK(var / 13.0 == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("layer norm gradients against finite differences") {
  Rng rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t rows = 1 + rng.below(3);
    const std::size_t cols = 2 + rng.below(6);
    Tensor x({rows, cols});
    for (double& v : x.values()) v = rng.uniform(-2.0, 2.0);
    Tensor gamma({cols}, true);
    Tensor beta({cols}, true);
    for (double& v : gamma.values()) v = rng.uniform(0.5, 1.5);
    for (double& v : beta.values()) v = rng.uniform(-0.5, 0.5);
    Tensor w({rows, cols});
    for (double& v : w.values()) v = rng.uniform(-1.0, 1.0);

    auto objective = [&](const Tensor& xin, Tensor* grad) {
      LayerNormCache cache;
      Tensor y = layer_norm(xin, gamma, beta, 1e-5, &cache);
      double f = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) f += w[i] * y[i];
      if (grad) {
        Tensor dy({rows, cols}, std::vector<double>(w.values().begin(), w.values().end()));
        *grad = layer_norm_backward(dy, cache, gamma, beta);
      }
      return f;
    };
    CHECK(grad_check(objective, x, 1e-5) < 1e-4);

    auto gamma_objective = [&](const Tensor& g, Tensor* grad) {
      Tensor gg({cols}, std::vector<double>(g.values().begin(), g.values().end()), true);
      Tensor bb({cols}, std::vector<double>(beta.values().begin(), beta.values().end()), true);
      LayerNormCache cache;
      Tensor y = layer_norm(x, gg, bb, 1e-5, &cache);
      double f = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) f += w[i] * y[i];
      if (grad) {
        Tensor dy({rows, cols}, std::vector<double>(w.values().begin(), w.values().end()));
        layer_norm_backward(dy, cache, gg, bb);
        *grad = Tensor({cols}, std::vector<double>(gg.grad().begin(), gg.grad().end()));
      }
      return f;
    };
    CHECK(grad_check(gamma_objective, gamma, 1e-5) < 1e-4);
  }
}

TEST_CASE("grad_check oracle examples") {
  SUBCASE("linear objective is exact") {
    Tensor theta({4}, std::vector<double>{0.3, -1.2, 2.0, 5.5});
    const std::vector<double> c{1.5, -2.0, 0.25, 3.0};
    auto f = [&](const Tensor& t, Tensor* g) {
      double s = 0.0;
      for (std::size_t i = 0; i < 4; ++i) s += c[i] * t[i];
      if (g) *g = Tensor({4}, c);
      return s;
    };
    CHECK(grad_check(f, theta, 1e-4) < 1e-10);
  }
  SUBCASE("square at three") {
    Tensor theta({1}, std::vector<double>{3.0});
    auto f = [](const Tensor& t, Tensor* g) {
      if (g) *g = Tensor({1}, std::vector<double>{2.0 * t[0]});
      return t[0] * t[0];
    };
    CHECK(grad_check(f, theta, 1e-4) < 1e-6);
  }
  SUBCASE("a doubled gradient is reported") {
    Tensor theta({3}, std::vector<double>{0.5, 1.0, -0.7});
    auto f = [](const Tensor& t, Tensor* g) {
      double s = 0.0;
      for (std::size_t i = 0; i < 3; ++i) s += t[i] * t[i];
      if (g) {
        *g = Tensor({3});
        for (std::size_t i = 0; i < 3; ++i) (*g)[i] = 2.0 * (2.0 * t[i]);
      }
      return s;
    };
    const double err = grad_check(f, theta, 1e-5);
    // |4t - 2t| / max(1, |4t|) peaks at 0.5 for |t| >= 0.25
    CHECK(err == doctest::Approx(0.5).epsilon(1e-6));
  }
  SUBCASE("bad step and non-finite objective") {
    Tensor theta({1}, std::vector<double>{1.0});
    auto f = [](const Tensor& t, Tensor* g) {
      if (g) *g = Tensor({1});
      return t[0];
    };
    CHECK_THROWS_AS(grad_check(f, theta, 0.0), ConfigError);
    CHECK_THROWS_AS(grad_check(f, theta, 0.1), ConfigError);
    auto bad = [](const Tensor&, Tensor* g) {
      if (g) *g = Tensor({1});
      return std::numeric_limits<double>::infinity();
    };
    CHECK_THROWS_AS(grad_check(bad, theta, 1e-5), NumericDomainError);
  }
}

TEST_CASE("init sampling") {
  const InitSpec uniform{InitKind::UniformFanIn, 1.0};
  SUBCASE("determinism") {
    Rng a(99), b(99);
    CHECK(sample(uniform, a, 4, 50) == sample(uniform, b, 4, 50));
  }
  SUBCASE("uniform support") {
    Rng rng(1);
    for (double v : sample(uniform, rng, 4, 10000)) CHECK(std::abs(v) <= 0.5);
  }
  SUBCASE("mean and spread") {
    Rng rng(2);
    const auto u = sample(uniform, rng, 4, 100000);
    const double mean = std::accumulate(u.begin(), u.end(), 0.0) / static_cast<double>(u.size());
    CHECK(std::abs(mean) < 0.01);
    const InitSpec normal{InitKind::NormalScaled, 2.0};
    const auto n = sample(normal, rng, 16, 100000);
    double m = 0.0, s = 0.0;
    for (double v : n) m += v;
    m /= static_cast<double>(n.size());
    for (double v : n) s += (v - m) * (v - m);
    CHECK(std::abs(m) < 0.01);
    CHECK(std::sqrt(s / static_cast<double>(n.size())) == doctest::Approx(0.5).epsilon(0.01));
  }
  SUBCASE("zero fan-in") {
    Rng rng(3);
    CHECK_THROWS_AS(sample(uniform, rng, 0, 3), ConfigError);
  }
}

TEST_CASE("rng streams") {
  Rng a(42), b(42), c(43);
  std::vector<std::uint64_t> xa, xb, xc;
  for (int i = 0; i < 16; ++i) {
    xa.push_back(a.next_u64());
    xb.push_back(b.next_u64());
    xc.push_back(c.next_u64());
  }
  CHECK(xa == xb);
  CHECK(xa != xc);

  Rng parent(7);
  Rng d1 = parent.derive("x");
  Rng d2 = parent.derive("x");
  Rng d3 = parent.derive("y");
  CHECK(d1.next_u64() == d2.next_u64());
  CHECK(Rng(7).derive("x").next_u64() != d3.next_u64());
  CHECK(parent.next_u64() == Rng(7).next_u64());

  Rng r(5);
  for (int i = 0; i < 1000; ++i) {
    CHECK(r.below(7) < 7);
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("gemm helpers agree with the naive product") {
  Rng rng(8);
  const std::size_t m = 5, k = 7, n = 3;
  std::vector<double> a(m * k), b(k * n);
  for (double& v : a) v = rng.uniform(-1, 1);
  for (double& v : b) v = rng.uniform(-1, 1);
  const auto ref = oracle::matmul(a, b, m, k, n);
  std::vector<double> c(m * n);
  gemm(a.data(), b.data(), c.data(), m, k, n);
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-13));

  std::vector<double> bt(n * k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < n; ++j) bt[j * k + i] = b[i * n + j];
  std::vector<double> c2(m * n, 1.0);
  gemm_bt(a.data(), bt.data(), c2.data(), m, k, n, true);
  for (std::size_t i = 0; i < c2.size(); ++i) CHECK(c2[i] == doctest::Approx(ref[i] + 1.0).epsilon(1e-13));

  std::vector<double> at(k * m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j) at[j * m + i] = a[i * k + j];
  std::vector<double> c3(m * n);
  // c3 (m x n) = at^T (m x k) * b (k x n)
  gemm_at(at.data(), b.data(), c3.data(), k, m, n);
  for (std::size_t i = 0; i < c3.size(); ++i) CHECK(c3[i] == doctest::Approx(ref[i]).epsilon(1e-13));
}

TEST_CASE("tensor invariants") {
  Tensor t({2, 3}, true);
  CHECK(t.grad().size() == 6);
  t.set_trainable(false);
  CHECK_THROWS_AS(t.grad(), StateError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  Tensor u({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  CHECK(u.at(1, 2) == 6.0);
  CHECK(u.rows() == 2);
  CHECK(u.cols() == 3);
  CHECK(checksum(u) == checksum(Tensor({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6})));
  CHECK(checksum(u) != checksum(u.reshaped({3, 2})));
}
