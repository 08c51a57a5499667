#include "emi/ops.hpp"

#include <algorithm>
#include <cmath>

#include "emi/kernels.hpp"

namespace emi::ops {
namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         shape_to_string(t.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner extents differ, " + shape_to_string(a.shape()) + " x " +
                         shape_to_string(b.shape()));
  }
  Tensor c({m, n});
  kernels::active().gemm(m, k, n, a.data().data(), b.data().data(), c.data().data());
  require_finite(c, "matmul");
  return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_tn");
  require_rank(b, 2, "matmul_tn");
  const std::size_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul_tn: row counts differ, " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
  Tensor c({m, n});
  kernels::active().gemm_tn(m, k, n, a.data().data(), b.data().data(), c.data().data());
  require_finite(c, "matmul_tn");
  return c;
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  Tensor t({cols, rows});
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) t[j * rows + i] = a[i * cols + j];
  }
  return t;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor elementwise(Binary op, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "elementwise");
  Tensor out(a.shape());
  const auto& k = kernels::active();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  switch (op) {
    case Binary::add: k.add(a.size(), pa, pb, po); break;
    case Binary::sub: k.sub(a.size(), pa, pb, po); break;
    case Binary::mul: k.mul(a.size(), pa, pb, po); break;
  }
  require_finite(out, "elementwise");
  return out;
}

Tensor elementwise(Unary op, const Tensor& x) {
  Tensor out(x.shape());
  switch (op) {
    case Unary::relu:
      kernels::active().relu(x.size(), x.data().data(), out.data().data());
      break;
    case Unary::sigmoid:
      std::transform(x.data().begin(), x.data().end(), out.data().begin(), [](double v) { return sigmoid(v); });
      break;
    case Unary::identity:
      out = x;
      break;
  }
  require_finite(out, "elementwise");
  return out;
}

Tensor scale(const Tensor& x, double s) {
  Tensor out(x.shape());
  kernels::active().scale(x.size(), x.data().data(), s, out.data().data());
  require_finite(out, "scale");
  return out;
}

Tensor unary_backward(Unary op, const Tensor& input, const Tensor& output, const Tensor& upstream) {
  require_same_shape(input, upstream, "unary_backward");
  Tensor grad(input.shape());
  switch (op) {
    case Unary::relu:
      kernels::active().relu_backward(input.size(), input.data().data(), upstream.data().data(),
                                      grad.data().data());
      break;
    case Unary::sigmoid:
      require_same_shape(output, upstream, "unary_backward");
      for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = upstream[i] * output[i] * (1.0 - output[i]);
      break;
    case Unary::identity:
      grad = upstream;
      break;
  }
  return grad;
}

void accumulate(Tensor& acc, const Tensor& x) {
  require_same_shape(acc, x, "accumulate");
  kernels::active().accumulate(x.size(), x.data().data(), acc.data().data());
}

Tensor add_row_vector(const Tensor& x, const Tensor& row) {
  require_rank(x, 2, "add_row_vector");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (row.size() != cols) {
    throw DimensionError("add_row_vector: row of shape " + shape_to_string(row.shape()) + " vs matrix " +
                         shape_to_string(x.shape()));
  }
  Tensor out(x.shape());
  const auto& k = kernels::active();
  for (std::size_t i = 0; i < rows; ++i) {
    k.add(cols, x.data().data() + i * cols, row.data().data(), out.data().data() + i * cols);
  }
  require_finite(out, "add_row_vector");
  return out;
}

namespace {

// Views `shape` as [outer, axis extent, inner].
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_to_string(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) out.push_back(shape[i]);
  }
  if (out.empty()) out.push_back(1);
  return out;
}

}  // namespace

Tensor reduce_mean(const Tensor& x, std::size_t axis) {
  if (x.empty()) throw DimensionError("reduce_mean: empty tensor");
  const AxisSplit s = split_at(x.shape(), axis);
  Tensor out(drop_axis(x.shape(), axis));
  const auto& k = kernels::active();
  const double n = static_cast<double>(s.extent);
  for (std::size_t o = 0; o < s.outer; ++o) {
    double* dst = out.data().data() + o * s.inner;
    k.col_sum(s.extent, s.inner, x.data().data() + o * s.extent * s.inner, dst);
    for (std::size_t j = 0; j < s.inner; ++j) dst[j] /= n;
  }
  require_finite(out, "reduce_mean");
  return out;
}

Tensor reduce_mean_backward(const Tensor& upstream, const Shape& input_shape, std::size_t axis) {
  const AxisSplit s = split_at(input_shape, axis);
  if (upstream.size() != s.outer * s.inner) {
    throw DimensionError("reduce_mean_backward: upstream " + shape_to_string(upstream.shape()) +
                         " does not match input " + shape_to_string(input_shape));
  }
  Tensor grad(input_shape);
  const double n = static_cast<double>(s.extent);
  for (std::size_t o = 0; o < s.outer; ++o) {
    const double* src = upstream.data().data() + o * s.inner;
    for (std::size_t e = 0; e < s.extent; ++e) {
      double* dst = grad.data().data() + (o * s.extent + e) * s.inner;
      for (std::size_t j = 0; j < s.inner; ++j) dst[j] = src[j] / n;
    }
  }
  return grad;
}

Tensor sum_rows(const Tensor& x) {
  require_rank(x, 2, "sum_rows");
  Tensor out({x.dim(1)});
  kernels::active().col_sum(x.dim(0), x.dim(1), x.data().data(), out.data().data());
  return out;
}

double grad_check(const DifferentiableFn& f, const Tensor& x, double eps) {
  if (!(eps > 0.0)) throw ConfigError("grad_check: eps must be positive");
  const ValueAndGrad at_x = f(x);
  require_same_shape(at_x.grad, x, "grad_check");
  if (!std::isfinite(at_x.value) || !at_x.grad.all_finite()) {
    throw NumericError("grad_check: non-finite value or gradient at the base point");
  }
  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double original = probe[i];
    probe[i] = original + eps;
    const double plus = f(probe).value;
    probe[i] = original - eps;
    const double minus = f(probe).value;
    probe[i] = original;
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
      throw NumericError("grad_check: non-finite value at coordinate " + std::to_string(i));
    }
    const double central = (plus - minus) / (2.0 * eps);
    const double analytic = at_x.grad[i];
    const double denom = std::max({1.0, std::abs(analytic), std::abs(central)});
    worst = std::max(worst, std::abs(analytic - central) / denom);
  }
  return worst;
}

}  // namespace emi::ops
