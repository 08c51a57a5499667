#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "emi/ops.hpp"
#include "emi/tensor.hpp"
#include "test_util.hpp"

using namespace emi;
using testutil::random_tensor;

namespace {

Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a.at(i, p) * b.at(p, j);
      c.at(i, j) = s;
    }
  }
  return c;
}

Tensor identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

}  // namespace

TEST_CASE("tensor construction enforces shape invariants") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  CHECK(t.dim(1) == 3);
  CHECK(t.at(1, 2) == 1.5);
  CHECK_THROWS_AS(Tensor({2, 0}), DimensionError);
  CHECK_THROWS_AS(Tensor(Shape{}), DimensionError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(Tensor::from({{1.0, 2.0}, {3.0}}), DimensionError);
  CHECK_THROWS_AS(t.dim(2), DimensionError);
  CHECK_THROWS_AS(t.reshaped({4, 2}), DimensionError);

  Tensor r = t.reshaped({3, 2});
  CHECK(r.shape() == Shape{3, 2});
  CHECK(r.values() == t.values());
  CHECK(shape_to_string({2, 3}) == "[2x3]");
}

TEST_CASE("matmul examples") {
  std::mt19937_64 rng(1);
  const Tensor a = random_tensor({5, 5}, rng);
  CHECK(ops::matmul(identity(5), a) == a);
  CHECK(ops::matmul(a, identity(5)) == a);

  const Tensor m = Tensor::from({{1.0, 2.0}, {3.0, 4.0}});
  const Tensor col = Tensor({2, 1}, std::vector<double>{0.0, 1.0});
  CHECK(ops::matmul(m, col) == Tensor({2, 1}, std::vector<double>{2.0, 4.0}));

  CHECK_THROWS_AS(ops::matmul(m, Tensor({3, 1})), DimensionError);
  CHECK_THROWS_AS(ops::matmul(Tensor({2}), m), DimensionError);
}

TEST_CASE("matmul matches the triple-loop oracle on random shapes") {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> extent(1, 19);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = extent(rng), k = extent(rng), n = extent(rng);
    const Tensor a = random_tensor({m, k}, rng);
    const Tensor b = random_tensor({k, n}, rng);
    // Same left-to-right order per entry, so the match is exact.
    CHECK(ops::matmul(a, b) == naive_matmul(a, b));
    const Tensor at = ops::transpose(a);
    CHECK(ops::matmul_tn(at, b) == naive_matmul(a, b));
  }
  const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
  CHECK(ops::matmul(a, b) == naive_matmul(a, b));
}

TEST_CASE("matmul reports non-finite results") {
  const Tensor big = Tensor::from({{1e300, 1e300}});
  const Tensor col = Tensor({2, 1}, std::vector<double>{1e300, 1e300});
  CHECK_THROWS_AS(ops::matmul(big, col), NumericError);
}

TEST_CASE("elementwise examples") {
  CHECK(ops::sigmoid(0.0) == 0.5);
  CHECK(ops::relu(Tensor::from({-3.0, 3.0})) == Tensor::from({0.0, 3.0}));
  CHECK(ops::add(Tensor::from({1.0, 2.0}), Tensor::from({3.0, 4.0})) == Tensor::from({4.0, 6.0}));
  CHECK(ops::sub(Tensor::from({1.0, 2.0}), Tensor::from({3.0, 4.0})) == Tensor::from({-2.0, -2.0}));
  CHECK(ops::mul(Tensor::from({1.0, 2.0}), Tensor::from({3.0, 4.0})) == Tensor::from({3.0, 8.0}));
  CHECK(ops::scale(Tensor::from({1.0, -2.0}), 0.5) == Tensor::from({0.5, -1.0}));
  CHECK_THROWS_AS(ops::add(Tensor({2}), Tensor({3})), DimensionError);
}

TEST_CASE("sigmoid is stable at the extremes") {
  CHECK(ops::sigmoid(-800.0) >= 0.0);
  CHECK(ops::sigmoid(-800.0) < 1e-300);
  CHECK(ops::sigmoid(800.0) == 1.0);
  for (double x : {-30.0, -2.0, -0.1, 0.1, 2.0, 30.0}) {
    CHECK(ops::sigmoid(x) + ops::sigmoid(-x) == doctest::Approx(1.0).epsilon(1e-15));
  }
  const Tensor s = ops::sigmoid(Tensor::from({-1000.0, 0.0, 1000.0}));
  CHECK(s.all_finite());
}

TEST_CASE("reduce_mean examples") {
  const Tensor x = Tensor::from({{1.0, 3.0}, {5.0, 7.0}});
  CHECK(ops::reduce_mean(x, 1) == Tensor::from({2.0, 6.0}));
  CHECK(ops::reduce_mean(x, 0) == Tensor::from({3.0, 5.0}));

  const Tensor single = Tensor({4, 1, 3}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
  CHECK(ops::reduce_mean(single, 1).values() == single.values());
  CHECK(ops::reduce_mean(Tensor::from({2.0, 4.0}), 0) == Tensor({1}, 3.0));
  CHECK_THROWS_AS(ops::reduce_mean(x, 2), DimensionError);
}

TEST_CASE("reduce_mean matches a per-column loop oracle on 128x256") {
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor({128, 256}, rng, -10.0, 10.0);
  const Tensor got = ops::reduce_mean(x, 0);
  for (std::size_t j = 0; j < 256; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < 128; ++i) s += x.at(i, j);
    CHECK(std::abs(got[j] - s / 128.0) <= 1e-12);
  }
}

TEST_CASE("sum_rows and add_row_vector") {
  const Tensor x = Tensor::from({{1.0, 2.0}, {3.0, 4.0}, {5.0, 6.0}});
  CHECK(ops::sum_rows(x) == Tensor::from({9.0, 12.0}));
  CHECK(ops::add_row_vector(x, Tensor::from({10.0, 20.0})) == Tensor::from({{11.0, 22.0}, {13.0, 24.0}, {15.0, 26.0}}));
  CHECK_THROWS_AS(ops::add_row_vector(x, Tensor::from({1.0})), DimensionError);
}

TEST_CASE("grad_check examples") {
  const ops::DifferentiableFn square = [](const Tensor& x) {
    return ops::ValueAndGrad{x[0] * x[0], Tensor::from({2.0 * x[0]})};
  };
  CHECK(ops::grad_check(square, Tensor::from({3.0})) < 1e-9);

  const ops::DifferentiableFn constant = [](const Tensor& x) { return ops::ValueAndGrad{4.0, Tensor(x.shape())}; };
  CHECK(ops::grad_check(constant, Tensor::from({1.0, 2.0})) == 0.0);

  const ops::DifferentiableFn wrong = [](const Tensor& x) {
    return ops::ValueAndGrad{x[0] * x[0], Tensor::from({x[0]})};
  };
  CHECK(ops::grad_check(wrong, Tensor::from({3.0})) > 0.1);
  CHECK_THROWS_AS(ops::grad_check(square, Tensor::from({3.0}), 0.0), ConfigError);
}

TEST_CASE("differentiable ops pass grad_check at 10 seeds") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(100 + seed);
    const Tensor w = random_tensor({4, 3}, rng);
    const Tensor upstream = random_tensor({5, 3}, rng);

    // L = <upstream, x W>
    const ops::DifferentiableFn f_matmul = [&](const Tensor& x) {
      const Tensor y = ops::matmul(x, w);
      double v = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) v += upstream[i] * y[i];
      return ops::ValueAndGrad{v, ops::matmul(upstream, ops::transpose(w))};
    };
    CHECK(ops::grad_check(f_matmul, random_tensor({5, 4}, rng)) < 1e-6);

    // L = <u, sigmoid(x)>
    const Tensor u = random_tensor({6}, rng);
    const ops::DifferentiableFn f_sig = [&](const Tensor& x) {
      const Tensor y = ops::sigmoid(x);
      double v = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) v += u[i] * y[i];
      return ops::ValueAndGrad{v, ops::unary_backward(ops::Unary::sigmoid, x, y, u)};
    };
    CHECK(ops::grad_check(f_sig, random_tensor({6}, rng, -3.0, 3.0)) < 1e-6);

    // L = <u, relu(x)> away from the kink
    Tensor xr = random_tensor({6}, rng, 0.2, 1.0);
    for (std::size_t i = 0; i < xr.size(); i += 2) xr[i] = -xr[i];
    const ops::DifferentiableFn f_relu = [&](const Tensor& x) {
      const Tensor y = ops::relu(x);
      double v = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) v += u[i] * y[i];
      return ops::ValueAndGrad{v, ops::unary_backward(ops::Unary::relu, x, y, u)};
    };
    CHECK(ops::grad_check(f_relu, xr) < 1e-6);

    // L = <u2, mean over axis 1 of x>
    const Tensor u2 = random_tensor({2, 4}, rng);
    const ops::DifferentiableFn f_mean = [&](const Tensor& x) {
      const Tensor y = ops::reduce_mean(x, 1);
      double v = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) v += u2[i] * y[i];
      return ops::ValueAndGrad{v, ops::reduce_mean_backward(u2, x.shape(), 1)};
    };
    CHECK(ops::grad_check(f_mean, random_tensor({2, 5, 4}, rng)) < 1e-6);
  }
}

TEST_CASE("operations are deterministic") {
  std::mt19937_64 rng(4);
  const Tensor a = random_tensor({33, 17}, rng), b = random_tensor({17, 29}, rng);
  CHECK(ops::matmul(a, b) == ops::matmul(a, b));
  CHECK(ops::reduce_mean(a, 0) == ops::reduce_mean(a, 0));
}

TEST_CASE("require_finite rejects NaN and Inf") {
  Tensor t({3});
  CHECK_NOTHROW(require_finite(t, "t"));
  t[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(require_finite(t, "t"), NumericError);
  t[1] = std::numeric_limits<double>::infinity();
  CHECK_FALSE(t.all_finite());
}
