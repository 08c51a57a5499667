#pragma once

#include <functional>

#include "emi/tensor.hpp"

namespace emi::ops {

// Standard matrix product of rank-2 tensors. Each output entry is summed over
// the inner extent left to right, so results are bit-reproducible across
// kernel variants.
Tensor matmul(const Tensor& a, const Tensor& b);
// a^T * b without materializing the transpose; equals matmul(transpose(a), b).
Tensor matmul_tn(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

enum class Unary { relu, sigmoid, identity };
enum class Binary { add, sub, mul };

Tensor elementwise(Binary op, const Tensor& a, const Tensor& b);
Tensor elementwise(Unary op, const Tensor& x);
Tensor scale(const Tensor& x, double s);

inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(Binary::add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(Binary::sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(Binary::mul, a, b); }
inline Tensor relu(const Tensor& x) { return elementwise(Unary::relu, x); }
inline Tensor sigmoid(const Tensor& x) { return elementwise(Unary::sigmoid, x); }

double sigmoid(double x);

// Gradient of a unary activation given its input, its output and the
// upstream gradient.
Tensor unary_backward(Unary op, const Tensor& input, const Tensor& output, const Tensor& upstream);

// acc += x, in place (gradient accumulation).
void accumulate(Tensor& acc, const Tensor& x);

// Adds a length-n row vector to every row of a [rows x n] matrix.
Tensor add_row_vector(const Tensor& x, const Tensor& row);

// Arithmetic mean along `axis`; the output drops that axis (a rank-1 input
// yields shape [1]).
Tensor reduce_mean(const Tensor& x, std::size_t axis);
// Spreads the upstream gradient of reduce_mean uniformly back over `axis`.
Tensor reduce_mean_backward(const Tensor& upstream, const Shape& input_shape, std::size_t axis);

// Column sums of a rank-2 tensor (sum over rows).
Tensor sum_rows(const Tensor& x);

struct ValueAndGrad {
  double value;
  Tensor grad;
};
using DifferentiableFn = std::function<ValueAndGrad(const Tensor&)>;

// Maximum over coordinates of |analytic - central| / max(1, |analytic|, |central|)
// where `central` is the symmetric finite difference with step eps.
double grad_check(const DifferentiableFn& f, const Tensor& x, double eps = 1e-5);

}  // namespace emi::ops
