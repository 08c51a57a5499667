#include <cmath>
#include <cstring>

#include "emi/kernels.hpp"

namespace emi::kernels {
namespace {

void gemm(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  std::memset(c, 0, m * n * sizeof(double));
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  std::memset(c, 0, m * n * sizeof(double));
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[p * m + i];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

void col_sum(std::size_t rows, std::size_t cols, const double* x, double* out) {
  std::memset(out, 0, cols * sizeof(double));
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = x + i * cols;
    for (std::size_t j = 0; j < cols; ++j) out[j] += row[j];
  }
}

void add(std::size_t n, const double* a, const double* b, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void sub(std::size_t n, const double* a, const double* b, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void mul(std::size_t n, const double* a, const double* b, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void scale(std::size_t n, const double* a, double s, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * s;
}

void accumulate(std::size_t n, const double* x, double* acc) {
  for (std::size_t i = 0; i < n; ++i) acc[i] += x[i];
}

void relu(std::size_t n, const double* x, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(std::size_t n, const double* x, const double* g, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? g[i] : 0.0;
}

void adamw(std::size_t n, const AdamWArgs& args, const double* grad, double* param, double* m, double* v) {
  const double one_minus_b1 = 1.0 - args.beta1;
  const double one_minus_b2 = 1.0 - args.beta2;
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad[i];
    m[i] = args.beta1 * m[i] + one_minus_b1 * g;
    v[i] = args.beta2 * v[i] + one_minus_b2 * (g * g);
    const double m_hat = m[i] / args.bias_correction1;
    const double v_hat = v[i] / args.bias_correction2;
    const double update = m_hat / (std::sqrt(v_hat) + args.eps) + args.weight_decay * param[i];
    param[i] = param[i] - args.lr * update;
  }
}

void ema(std::size_t n, double decay, const double* param, double* shadow) {
  const double keep = 1.0 - decay;
  for (std::size_t i = 0; i < n; ++i) shadow[i] = decay * shadow[i] + keep * param[i];
}

}  // namespace

const KernelTable& scalar_kernels() {
  static const KernelTable table{
      "scalar", gemm, gemm_tn, col_sum, add, sub, mul, scale, accumulate, relu, relu_backward, adamw, ema,
  };
  return table;
}

}  // namespace emi::kernels
