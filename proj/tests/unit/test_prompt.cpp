#include <cmath>

#include "cbpnet/errors.hpp"
#include "cbpnet/prompt.hpp"
#include "doctest.h"
#include "fixtures.hpp"

using namespace cbpnet;
using fixture::to_vec;

namespace {

EPromptPool pool_with_keys(const std::vector<std::vector<double>>& keys) {
  const std::size_t d = keys.front().size();
  EPromptPool pool(1, d, {});
  Rng rng(0);
  for (const auto& k : keys) {
    const std::size_t t = pool.add_task(rng);
    std::copy(k.begin(), k.end(), pool.task(t).key.values().begin());
  }
  return pool;
}

}  // namespace

TEST_CASE("select_eprompt examples") {
  const std::vector<double> q{0.3, -1.0, 2.0};
  SUBCASE("the copy of q wins over an orthogonal key") {
    auto pool = pool_with_keys({{2.0, 0.0, -0.3}, q});
    CHECK(select_eprompt(q, pool) == 1);
    std::vector<double> q3{0.9, -3.0, 6.0};
    CHECK(select_eprompt(q3, pool) == 1);
  }
  SUBCASE("ties go to the lowest index") {
    std::vector<std::vector<double>> keys(6, {-1.0, 0.0, 0.0});
    keys[2] = q;
    keys[5] = q;
    auto pool = pool_with_keys(keys);
    CHECK(select_eprompt(q, pool) == 2);
    // a rescaled duplicate ties in exact arithmetic but not necessarily in floating point
    keys[5] = {0.6, -2.0, 4.0};
    auto pool2 = pool_with_keys(keys);
    const auto t = select_eprompt(q, pool2);
    CHECK((t == 2 || t == 5));
  }
  SUBCASE("errors") {
    auto pool = pool_with_keys({{1.0, 0.0, 0.0}, {0.0, 0.0, 0.0}});
    CHECK_THROWS_AS(select_eprompt(std::vector<double>{0, 0, 0}, pool), NumericDomainError);
    CHECK_THROWS_AS(select_eprompt(q, pool), NumericDomainError);
    EPromptPool empty(1, 3, {});
    CHECK_THROWS_AS(select_eprompt(q, empty), StateError);
    auto wrong = pool_with_keys({{1.0, 0.0}});
    CHECK_THROWS_AS(select_eprompt(q, wrong), ShapeError);
  }
}

TEST_CASE("selection is invariant under positive rescaling of the query and of each key") {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::vector<double>> keys(2 + rng.below(6), std::vector<double>(5));
    for (auto& k : keys)
      for (double& v : k) v = rng.normal();
    std::vector<double> q(5);
    for (double& v : q) v = rng.normal();
    const auto base = select_eprompt(q, pool_with_keys(keys));
    auto scaled_keys = keys;
    for (auto& k : scaled_keys) {
      // powers of two keep the cosines bit-identical
      const double s = std::ldexp(1.0, static_cast<int>(rng.below(9)) - 4);
      for (double& v : k) v *= s;
    }
    std::vector<double> q2(q);
    for (double& v : q2) v *= 8.0;
    CHECK(select_eprompt(q2, pool_with_keys(scaled_keys)) == base);
  }
}

TEST_CASE("matching_loss examples and range") {
  const std::vector<double> k{1.0, 2.0, -0.5};
  CHECK(matching_loss(k, k) == doctest::Approx(0.0).epsilon(1e-15));
  const std::vector<double> neg{-1.0, -2.0, 0.5};
  CHECK(matching_loss(neg, k) == doctest::Approx(2.0).epsilon(1e-15));
  const std::vector<double> orth{2.0, -1.0, 0.0};
  CHECK(matching_loss(orth, k) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(matching_loss(std::vector<double>{0, 0, 0}, k), NumericDomainError);
  CHECK_THROWS_AS(matching_loss(k, std::vector<double>{0, 0, 0}), NumericDomainError);
  CHECK_THROWS_AS(matching_loss(k, std::vector<double>{1, 2}), ShapeError);

  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> a(4), b(4);
    for (double& v : a) v = rng.normal();
    for (double& v : b) v = rng.normal();
    const double l = matching_loss(a, b);
    CHECK(l >= 0.0);
    CHECK(l <= 2.0);
  }
}

TEST_CASE("matching_loss key gradient") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 2 + rng.below(8);
    Tensor q = fixture::random_tensor({d}, rng);
    Tensor key = fixture::random_tensor({d}, rng);
    auto f = [&](const Tensor& k, Tensor* g) {
      if (g) {
        *g = Tensor({d});
        return matching_loss(q.values(), k.values(), g->values());
      }
      return matching_loss(q.values(), k.values());
    };
    CHECK(grad_check(f, key) < 1e-4);
  }
}

TEST_CASE("assemble") {
  Rng rng(4);
  SUBCASE("default attachment") {
    GPrompt g(5, 8, {0, 1}, rng);
    EPromptPool pool(5, 8, {2, 3, 4});
    pool.add_task(rng);
    pool.add_task(rng);
    PromptMap map = assemble(g, pool, 1);
    REQUIRE(map.size() == 5);
    CHECK(map.at(0).key == &g.pairs()[0].key);
    CHECK(map.at(1).value == &g.pairs()[1].value);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(map.at(2 + i).key == &pool.task(1).pairs[i].key);
      CHECK(map.at(2 + i).value == &pool.task(1).pairs[i].value);
      CHECK(map.at(2 + i).key->shape() == Shape{5, 8});
    }
  }
  SUBCASE("empty attachment lists") {
    GPrompt g(0, 8, {}, rng);
    EPromptPool pool(0, 8, {});
    pool.add_task(rng);
    CHECK(assemble(g, pool, 0).empty());
  }
  SUBCASE("overlap and unknown task") {
    GPrompt g(2, 8, {0, 1}, rng);
    EPromptPool pool(2, 8, {1, 2});
    pool.add_task(rng);
    CHECK_THROWS_AS(assemble(g, pool, 0), ConfigError);
    EPromptPool ok(2, 8, {2});
    ok.add_task(rng);
    CHECK_THROWS_AS(assemble(g, ok, 1), IndexError);
  }
  SUBCASE("zero length on attached layers") {
    CHECK_THROWS_AS(GPrompt(0, 8, {0}, rng), ConfigError);
    CHECK_THROWS_AS(EPromptPool(0, 8, {2}), ConfigError);
  }
}

TEST_CASE("prompt initialization and naming") {
  Rng rng(5);
  GPrompt g(5, 16, {0, 1}, rng);
  EPromptPool pool(5, 16, {2, 3, 4});
  for (int t = 0; t < 3; ++t) pool.add_task(rng);
  for (auto& [name, t] : g.parameters()) {
    CHECK(t->trainable());
    for (double v : t->values()) CHECK(std::abs(v) <= kPromptInitBound);
  }
  const auto params = pool.task_parameters(2);
  CHECK(params.size() == 7);
  CHECK(params.front().first == "e_prompt/2/2/k");
  CHECK(params.back().first == "e_key/2");
  CHECK(pool.parameters().size() == 21);
  CHECK(g.parameters().front().first == "g_prompt/0/k");
  double key_norm = 0.0;
  for (double v : pool.task(0).key.values()) key_norm += v * v;
  CHECK(key_norm > 0.0);
}

TEST_CASE("assembling one task reads only that task's entries") {
  Rng rng(6);
  GPrompt g(2, 8, {0}, rng);
  EPromptPool pool(2, 8, {1});
  for (int t = 0; t < 3; ++t) pool.add_task(rng);
  const auto before = checksum(pool.task(2).pairs[0].key);
  PromptMap map = assemble(g, pool, 1);
  for (double& v : map.at(1).key->values()) v += 1.0;
  CHECK(checksum(pool.task(2).pairs[0].key) == before);
  CHECK(checksum(pool.task(0).pairs[0].key) != checksum(pool.task(1).pairs[0].key));
}
