#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

namespace emi::kernels {

// Hyperparameters for one fused AdamW update over a flat parameter block.
struct AdamWArgs {
  double lr;
  double beta1;
  double beta2;
  double eps;
  double weight_decay;
  double bias_correction1;  // 1 - beta1^t
  double bias_correction2;  // 1 - beta2^t
};

// Table of the data-parallel inner loops. Every variant must produce results
// bit-identical to the scalar reference: reductions keep the scalar summation
// order per output element and vectorize only across independent outputs.
struct KernelTable {
  const char* name;

  // c[m x n] = a[m x k] * b[k x n]; c[i][j] sums p = 0..k-1 left to right.
  void (*gemm)(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c);
  // c[m x n] = a^T * b with a stored as [k x m]; same summation order as gemm.
  void (*gemm_tn)(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c);
  // out[j] = sum over i = 0..rows-1 of x[i][j], in row order.
  void (*col_sum)(std::size_t rows, std::size_t cols, const double* x, double* out);

  void (*add)(std::size_t n, const double* a, const double* b, double* out);
  void (*sub)(std::size_t n, const double* a, const double* b, double* out);
  void (*mul)(std::size_t n, const double* a, const double* b, double* out);
  void (*scale)(std::size_t n, const double* a, double s, double* out);
  // acc[i] += x[i]
  void (*accumulate)(std::size_t n, const double* x, double* acc);
  // out[i] = x[i] > 0 ? x[i] : 0
  void (*relu)(std::size_t n, const double* x, double* out);
  // out[i] = x[i] > 0 ? g[i] : 0
  void (*relu_backward)(std::size_t n, const double* x, const double* g, double* out);

  void (*adamw)(std::size_t n, const AdamWArgs& args, const double* grad, double* param, double* m, double* v);
  // shadow[i] = decay * shadow[i] + (1 - decay) * param[i]
  void (*ema)(std::size_t n, double decay, const double* param, double* shadow);
};

const KernelTable& scalar_kernels();
// nullptr when the variant was not compiled in or the CPU lacks the ISA.
const KernelTable* avx2_kernels();

// Every variant usable on this machine, scalar first.
std::vector<const KernelTable*> available_kernels();

// Process-wide active table. Chosen once: the widest available variant,
// unless EMI_KERNELS=scalar|avx2 overrides it.
const KernelTable& active();
// Force a variant by name; returns false if it is unavailable.
bool select(std::string_view name);

}  // namespace emi::kernels
