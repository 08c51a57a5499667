#include <cmath>
#include <random>

#include "doctest.h"
#include "emi/layers.hpp"
#include "test_util.hpp"

using namespace emi;
using testutil::random_tensor;

namespace {

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Projects x with the layer and applies the three remaining stages as
// separate layers: the reference the fused encoder must reproduce.
struct ComposedEncoder {
  LinearLayer linear;
  Activation act;
  DropoutLayer drop;
  std::size_t batch = 0, steps = 0, hidden = 0;

  Tensor forward(const Tensor& x, Mode mode, Rng& rng, Tensor* pre_mean) {
    batch = x.dim(0);
    steps = x.dim(1);
    hidden = linear.out_features();
    Tensor p = linear.forward(x.reshaped({batch * steps, x.dim(2)}));
    if (pre_mean) *pre_mean = ops::reduce_mean(p.reshaped({batch, steps, hidden}), 1);
    Tensor d = drop.forward(act.forward(p), mode, rng);
    return ops::reduce_mean(d.reshaped({batch, steps, hidden}), 1);
  }
  void backward(const Tensor& up, const Tensor* pre_mean_grad) {
    Tensor gd = ops::reduce_mean_backward(up, {batch, steps, hidden}, 1).reshaped({batch * steps, hidden});
    Tensor gp = act.backward(drop.backward(gd));
    if (pre_mean_grad) {
      ops::accumulate(gp, ops::reduce_mean_backward(*pre_mean_grad, {batch, steps, hidden}, 1)
                              .reshaped({batch * steps, hidden}));
    }
    linear.backward(gp, false);
  }
};

}  // namespace

TEST_CASE("linear forward examples") {
  LinearLayer layer("l", 3, 3);
  for (std::size_t i = 0; i < 3; ++i) layer.weight().value.at(i, i) = 1.0;
  const Tensor x = Tensor::from({{1.0, -2.0, 3.0}, {0.5, 0.25, -1.0}});
  CHECK(layer.forward(x) == x);

  LinearLayer zero("z", 3, 2);
  zero.bias().value = Tensor::from({4.0, -1.0});
  const Tensor y = zero.forward(x);
  CHECK(y == Tensor::from({{4.0, -1.0}, {4.0, -1.0}}));

  std::mt19937_64 rng(1);
  LinearLayer r("r", 4, 5);
  r.weight().value = random_tensor({5, 4}, rng);
  r.bias().value = random_tensor({5}, rng);
  const Tensor xr = random_tensor({6, 4}, rng);
  CHECK(r.forward(xr) == ops::add_row_vector(ops::matmul(xr, ops::transpose(r.weight().value)), r.bias().value));

  CHECK_THROWS_AS(r.forward(Tensor({2, 3})), DimensionError);
}

TEST_CASE("linear backward examples") {
  LinearLayer layer("l", 1, 1);
  layer.weight().value = Tensor({1, 1}, 3.0);
  layer.bias().value = Tensor({1}, 0.5);
  layer.forward(Tensor({1, 1}, 2.0));
  const Tensor gx = layer.backward(Tensor({1, 1}, 4.0));
  CHECK(gx[0] == 12.0);                    // upstream * w
  CHECK(layer.weight().grad[0] == 8.0);    // upstream * x
  CHECK(layer.bias().grad[0] == 4.0);      // upstream

  LinearLayer z("z", 3, 2);
  std::mt19937_64 rng(2);
  z.weight().value = random_tensor({2, 3}, rng);
  z.forward(random_tensor({4, 3}, rng));
  const Tensor g0 = z.backward(Tensor({4, 2}));
  CHECK(g0 == Tensor({4, 3}));
  CHECK(z.weight().grad == Tensor({2, 3}));
  CHECK(z.bias().grad == Tensor({2}));

  CHECK_THROWS_AS(z.backward(Tensor({4, 2})), StateError);
  LinearLayer fresh("f", 2, 2);
  CHECK_THROWS_AS(fresh.backward(Tensor({1, 2})), StateError);
}

TEST_CASE("linear init is Xavier uniform with zero bias") {
  LinearLayer layer("l", 40, 60);
  Rng rng(3);
  layer.init(rng);
  const double bound = std::sqrt(6.0 / 100.0);
  double max_abs = 0.0;
  for (double w : layer.weight().value.data()) max_abs = std::max(max_abs, std::abs(w));
  CHECK(max_abs <= bound);
  CHECK(max_abs > 0.9 * bound);
  CHECK(layer.bias().value == Tensor({60}));
  CHECK(layer.weight().grad.shape() == layer.weight().value.shape());
}

TEST_CASE("linear layer passes grad_check for input, weight and bias") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(10 + seed);
    LinearLayer layer("l", 4, 3);
    layer.weight().value = random_tensor({3, 4}, rng);
    layer.bias().value = random_tensor({3}, rng);
    const Tensor x0 = random_tensor({5, 4}, rng);
    const Tensor u = random_tensor({5, 3}, rng);

    const ops::DifferentiableFn f_x = [&](const Tensor& x) {
      const double v = dot(u, layer.forward(x));
      layer.weight().zero_grad();
      layer.bias().zero_grad();
      return ops::ValueAndGrad{v, layer.backward(u)};
    };
    CHECK(ops::grad_check(f_x, x0) < 1e-6);

    const Tensor w0 = layer.weight().value;
    const ops::DifferentiableFn f_w = [&](const Tensor& w) {
      layer.weight().value = w;
      const double v = dot(u, layer.forward(x0));
      layer.weight().zero_grad();
      layer.bias().zero_grad();
      layer.backward(u);
      return ops::ValueAndGrad{v, layer.weight().grad};
    };
    CHECK(ops::grad_check(f_w, w0) < 1e-6);
    layer.weight().value = w0;

    const ops::DifferentiableFn f_b = [&](const Tensor& b) {
      layer.bias().value = b;
      const double v = dot(u, layer.forward(x0));
      layer.weight().zero_grad();
      layer.bias().zero_grad();
      layer.backward(u);
      return ops::ValueAndGrad{v, layer.bias().grad};
    };
    CHECK(ops::grad_check(f_b, layer.bias().value) < 1e-6);
  }
}

TEST_CASE("activation layers pass grad_check and report the relu kink margin") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(20 + seed);
    const Tensor u = random_tensor({3, 4}, rng);
    for (ops::Unary op : {ops::Unary::relu, ops::Unary::sigmoid, ops::Unary::identity}) {
      Activation act(op);
      Tensor x0 = random_tensor({3, 4}, rng, -2.0, 2.0);
      act.forward(x0);
      if (op == ops::Unary::relu && act.kink_margin() < 1e-3) continue;
      act.backward(u);
      const ops::DifferentiableFn f = [&](const Tensor& x) {
        const double v = dot(u, act.forward(x));
        return ops::ValueAndGrad{v, act.backward(u)};
      };
      CHECK(ops::grad_check(f, x0) < 1e-6);
    }
  }
  Activation relu(ops::Unary::relu);
  relu.forward(Tensor::from({-0.5, 0.25, 2.0}));
  CHECK(relu.kink_margin() == 0.25);
  CHECK_THROWS_AS(Activation().backward(Tensor({1})), StateError);
}

TEST_CASE("dropout eval mode and p = 0 are the exact identity") {
  std::mt19937_64 g(4);
  const Tensor x = random_tensor({50, 7}, g);
  Rng rng(5);
  const Rng before = rng;
  DropoutLayer eval_layer(0.2);
  CHECK(eval_layer.forward(x, Mode::eval, rng) == x);
  CHECK(rng == before);  // no draws in eval mode
  DropoutLayer none(0.0);
  CHECK(none.forward(x, Mode::train, rng) == x);
  CHECK(none.forward(x, Mode::eval, rng) == x);
  CHECK(none.backward(x) == x);
  CHECK_THROWS_AS(DropoutLayer(1.0), ConfigError);
  CHECK_THROWS_AS(DropoutLayer(-0.1), ConfigError);
  CHECK_THROWS_AS(DropoutLayer(0.2).backward(x), StateError);
}

TEST_CASE("dropout train mode keeps 1-p of the elements, scaled by 1/(1-p)") {
  DropoutLayer layer(0.2);
  Rng rng(6);
  const Tensor ones({1000000}, 1.0);
  const Tensor y = layer.forward(ones, Mode::train, rng);
  double sum = 0.0;
  std::size_t kept = 0, off_scale = 0;
  for (double v : y.data()) {
    sum += v;
    if (v != 0.0) {
      ++kept;
      if (v != 1.0 / 0.8) ++off_scale;
    }
  }
  CHECK(off_scale == 0);
  CHECK(std::abs(sum / 1e6 - 1.0) < 0.01);
  CHECK(std::abs(static_cast<double>(kept) / 1e6 - 0.8) < 0.002);

  // The backward pass applies the recorded mask.
  const Tensor g = layer.backward(Tensor({1000000}, 2.0));
  for (std::size_t i = 0; i < g.size(); i += 9973) CHECK(g[i] == 2.0 * y[i]);
}

TEST_CASE("dropout masks are reproducible from the seed") {
  const Tensor x({200}, 1.0);
  DropoutLayer a(0.5), b(0.5);
  Rng r1(9), r2(9), r3(10);
  CHECK(a.forward(x, Mode::train, r1) == b.forward(x, Mode::train, r2));
  CHECK_FALSE(a.forward(x, Mode::train, r1) == b.forward(x, Mode::train, r3));
}

TEST_CASE("keep sampler uses both halves of each draw") {
  Rng rng(12), mirror(12);
  KeepSampler s(rng, std::uint64_t{1} << 31);  // keep iff the 32-bit half is below 2^31
  for (int i = 0; i < 100; ++i) {
    const std::uint64_t w = mirror();
    CHECK(s.next() == ((w & 0xffffffffu) < (1u << 31)));
    CHECK(s.next() == ((w >> 32) < (1u << 31)));
  }
}

TEST_CASE("adaptive average pooling examples") {
  std::mt19937_64 rng(7);
  const Tensor x = random_tensor({128, 5}, rng);
  CHECK(adaptive_avg_pool(x, 128) == x);

  const Tensor long_x = random_tensor({256, 3}, rng);
  const Tensor p = adaptive_avg_pool(long_x, 128);
  REQUIRE(p.shape() == Shape{128, 3});
  for (std::size_t i = 0; i < 128; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(p.at(i, j) == doctest::Approx((long_x.at(2 * i, j) + long_x.at(2 * i + 1, j)) / 2.0).epsilon(1e-15));
    }
  }

  const Tensor three({3, 1}, std::vector<double>{1.0, 2.0, 4.0});
  const Tensor two = adaptive_avg_pool(three, 2);
  CHECK(two.at(0, 0) == 1.5);
  CHECK(two.at(1, 0) == 3.0);

  CHECK_THROWS_AS(adaptive_avg_pool(Tensor(), 4), DataError);
  CHECK_THROWS_AS(adaptive_avg_pool(three, 0), ConfigError);
}

TEST_CASE("adaptive pooling preserves the mean when T divides L and repeats rows when L < T") {
  std::mt19937_64 rng(8);
  const Tensor x = random_tensor({96, 4}, rng);
  const Tensor p = adaptive_avg_pool(x, 32);
  const Tensor m1 = ops::reduce_mean(x, 0), m2 = ops::reduce_mean(p, 0);
  for (std::size_t j = 0; j < 4; ++j) CHECK(m1[j] == doctest::Approx(m2[j]).epsilon(1e-13));

  const Tensor short_x = random_tensor({5, 2}, rng);
  const Tensor up = adaptive_avg_pool(short_x, 12);
  REQUIRE(up.shape() == Shape{12, 2});
  // Each output bin is non-empty: for L < T every bin holds one or two rows.
  for (std::size_t i = 0; i < 12; ++i) {
    const std::size_t begin = i * 5 / 12, end = ((i + 1) * 5 + 11) / 12;
    REQUIRE(end > begin);
    double s = 0.0;
    for (std::size_t r = begin; r < end; ++r) s += short_x.at(r, 0);
    CHECK(up.at(i, 0) == doctest::Approx(s / static_cast<double>(end - begin)).epsilon(1e-15));
  }
}

TEST_CASE("adaptive pooling backward passes grad_check") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(30 + seed);
    const std::size_t length = 3 + seed * 7, target = 8;
    const Tensor u = random_tensor({target, 3}, rng);
    const ops::DifferentiableFn f = [&](const Tensor& x) {
      return ops::ValueAndGrad{dot(u, adaptive_avg_pool(x, target)), adaptive_avg_pool_backward(u, length)};
    };
    CHECK(ops::grad_check(f, random_tensor({length, 3}, rng)) < 1e-6);
  }
}

TEST_CASE("fused sequence encoder is bit-identical to the composed layers") {
  for (ops::Unary act : {ops::Unary::relu, ops::Unary::sigmoid, ops::Unary::identity}) {
    for (double rate : {0.0, 0.2}) {
      for (Mode mode : {Mode::train, Mode::eval}) {
        CAPTURE(rate);
        std::mt19937_64 g(40);
        SequenceEncoder fused("e", 6, 10, act, rate);
        ComposedEncoder ref{LinearLayer("e", 6, 10), Activation(act), DropoutLayer(rate)};
        Rng init(1);
        fused.init(init);
        ref.linear.weight().value = fused.projector().weight().value;
        ref.linear.bias().value = random_tensor({10}, g);
        fused.projector().bias().value = ref.linear.bias().value;

        const Tensor x = random_tensor({3, 17, 6}, g);
        Rng r1(2), r2(2);
        Tensor m1, m2;
        const Tensor y1 = fused.forward(x, mode, r1, &m1);
        const Tensor y2 = ref.forward(x, mode, r2, &m2);
        CHECK(y1 == y2);
        CHECK(m1 == m2);
        CHECK(r1 == r2);

        const Tensor up = random_tensor({3, 10}, g), extra = random_tensor({3, 10}, g);
        fused.backward(up, &extra);
        ref.backward(up, &extra);
        CHECK(fused.projector().weight().grad == ref.linear.weight().grad);
        CHECK(fused.projector().bias().grad == ref.linear.bias().grad);
      }
    }
  }
}

TEST_CASE("sequence encoder passes grad_check") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 g(50 + seed);
    SequenceEncoder enc("e", 4, 5, ops::Unary::relu, 0.0);
    Rng init(seed);
    enc.init(init);
    const Tensor x = random_tensor({2, 6, 4}, g);
    const Tensor u = random_tensor({2, 5}, g), w = random_tensor({2, 5}, g);
    Rng rng(0);
    Tensor pm;
    enc.forward(x, Mode::train, rng, &pm);
    if (enc.kink_margin() < 1e-3) continue;
    enc.backward(u, &w);
    const Tensor w0 = enc.projector().weight().value;
    // L = <u, z> + <w, pre-activation mean>
    const ops::DifferentiableFn f = [&](const Tensor& weight) {
      enc.projector().weight().value = weight;
      enc.projector().weight().zero_grad();
      enc.projector().bias().zero_grad();
      Tensor mean;
      const double v = dot(u, enc.forward(x, Mode::train, rng, &mean)) + dot(w, mean);
      enc.backward(u, &w);
      return ops::ValueAndGrad{v, enc.projector().weight().grad};
    };
    CHECK(ops::grad_check(f, w0) < 1e-6);
  }
  SequenceEncoder enc("e", 4, 5, ops::Unary::relu, 0.0);
  CHECK_THROWS_AS(enc.backward(Tensor({1, 5})), StateError);
}
