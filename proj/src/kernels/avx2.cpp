// AVX2 variants of the kernel table. Compiled with -mavx2 only (no FMA) so
// that every lane performs exactly the multiply-then-add sequence of the
// scalar reference.

#include "emi/kernels.hpp"

#if defined(__x86_64__) && defined(__AVX2__)

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace emi::kernels {
namespace {

// Element r of the a-panel at reduction step p lives at a[r * rs + p * ps],
// which covers both a (rs = k, ps = 1) and a^T (rs = 1, ps = m).

// 4 rows x 8 columns of c, accumulated over the full k extent in registers.
inline void gemm_4x8(std::size_t k, std::size_t n, const double* a, std::size_t rs, std::size_t ps, const double* b,
                     double* c, bool resume) {
  __m256d c00, c01, c10, c11, c20, c21, c30, c31;
  if (resume) {
    c00 = _mm256_loadu_pd(c), c01 = _mm256_loadu_pd(c + 4);
    c10 = _mm256_loadu_pd(c + n), c11 = _mm256_loadu_pd(c + n + 4);
    c20 = _mm256_loadu_pd(c + 2 * n), c21 = _mm256_loadu_pd(c + 2 * n + 4);
    c30 = _mm256_loadu_pd(c + 3 * n), c31 = _mm256_loadu_pd(c + 3 * n + 4);
  } else {
    c00 = c01 = c10 = c11 = c20 = c21 = c30 = c31 = _mm256_setzero_pd();
  }
  const double* a0 = a;
  const double* a1 = a + rs;
  const double* a2 = a + 2 * rs;
  const double* a3 = a + 3 * rs;
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = b + p * n;
    const std::size_t o = p * ps;
    const __m256d b0 = _mm256_loadu_pd(brow);
    const __m256d b1 = _mm256_loadu_pd(brow + 4);
    __m256d av = _mm256_broadcast_sd(a0 + o);
    c00 = _mm256_add_pd(c00, _mm256_mul_pd(av, b0));
    c01 = _mm256_add_pd(c01, _mm256_mul_pd(av, b1));
    av = _mm256_broadcast_sd(a1 + o);
    c10 = _mm256_add_pd(c10, _mm256_mul_pd(av, b0));
    c11 = _mm256_add_pd(c11, _mm256_mul_pd(av, b1));
    av = _mm256_broadcast_sd(a2 + o);
    c20 = _mm256_add_pd(c20, _mm256_mul_pd(av, b0));
    c21 = _mm256_add_pd(c21, _mm256_mul_pd(av, b1));
    av = _mm256_broadcast_sd(a3 + o);
    c30 = _mm256_add_pd(c30, _mm256_mul_pd(av, b0));
    c31 = _mm256_add_pd(c31, _mm256_mul_pd(av, b1));
  }
  _mm256_storeu_pd(c, c00);
  _mm256_storeu_pd(c + 4, c01);
  _mm256_storeu_pd(c + n, c10);
  _mm256_storeu_pd(c + n + 4, c11);
  _mm256_storeu_pd(c + 2 * n, c20);
  _mm256_storeu_pd(c + 2 * n + 4, c21);
  _mm256_storeu_pd(c + 3 * n, c30);
  _mm256_storeu_pd(c + 3 * n + 4, c31);
}

// One row x 4 columns.
inline void gemm_1x4(std::size_t k, std::size_t n, const double* a, std::size_t ps, const double* b, double* c,
                     bool resume) {
  __m256d acc = resume ? _mm256_loadu_pd(c) : _mm256_setzero_pd();
  for (std::size_t p = 0; p < k; ++p) {
    acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_broadcast_sd(a + p * ps), _mm256_loadu_pd(b + p * n)));
  }
  _mm256_storeu_pd(c, acc);
}

inline double dot_strided(std::size_t k, std::size_t n, const double* a, std::size_t ps, const double* b, double init) {
  double acc = init;
  for (std::size_t p = 0; p < k; ++p) acc += a[p * ps] * b[p * n];
  return acc;
}

// Reduction is split into chunks of kBlockK so the a- and b-panels stay in
// cache; each chunk resumes from the stored partial sums, which keeps the
// left-to-right order of every output element.
constexpr std::size_t kBlockK = 128;

void gemm_strided(std::size_t m, std::size_t k, std::size_t n, const double* a, std::size_t rs, std::size_t ps,
                  const double* b, double* c) {
  if (k == 0) {
    std::memset(c, 0, m * n * sizeof(double));
    return;
  }
  for (std::size_t p0 = 0; p0 < k; p0 += kBlockK) {
    const std::size_t kc = std::min(kBlockK, k - p0);
    const bool resume = p0 > 0;
    const double* ak = a + p0 * ps;
    const double* bk = b + p0 * n;
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
      const double* arow = ak + i * rs;
      double* crow = c + i * n;
      std::size_t j = 0;
      for (; j + 8 <= n; j += 8) gemm_4x8(kc, n, arow, rs, ps, bk + j, crow + j, resume);
      for (; j + 4 <= n; j += 4) {
        for (std::size_t r = 0; r < 4; ++r) gemm_1x4(kc, n, arow + r * rs, ps, bk + j, crow + r * n + j, resume);
      }
      for (; j < n; ++j) {
        for (std::size_t r = 0; r < 4; ++r) {
          double* out = crow + r * n + j;
          *out = dot_strided(kc, n, arow + r * rs, ps, bk + j, resume ? *out : 0.0);
        }
      }
    }
    for (; i < m; ++i) {
      const double* arow = ak + i * rs;
      double* crow = c + i * n;
      std::size_t j = 0;
      for (; j + 4 <= n; j += 4) gemm_1x4(kc, n, arow, ps, bk + j, crow + j, resume);
      for (; j < n; ++j) crow[j] = dot_strided(kc, n, arow, ps, bk + j, resume ? crow[j] : 0.0);
    }
  }
}

void gemm(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  gemm_strided(m, k, n, a, k, 1, b, c);
}

void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  gemm_strided(m, k, n, a, 1, m, b, c);
}

void col_sum(std::size_t rows, std::size_t cols, const double* x, double* out) {
  std::size_t j = 0;
  for (; j + 16 <= cols; j += 16) {
    __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
    __m256d s2 = _mm256_setzero_pd(), s3 = _mm256_setzero_pd();
    for (std::size_t i = 0; i < rows; ++i) {
      const double* row = x + i * cols + j;
      s0 = _mm256_add_pd(s0, _mm256_loadu_pd(row));
      s1 = _mm256_add_pd(s1, _mm256_loadu_pd(row + 4));
      s2 = _mm256_add_pd(s2, _mm256_loadu_pd(row + 8));
      s3 = _mm256_add_pd(s3, _mm256_loadu_pd(row + 12));
    }
    _mm256_storeu_pd(out + j, s0);
    _mm256_storeu_pd(out + j + 4, s1);
    _mm256_storeu_pd(out + j + 8, s2);
    _mm256_storeu_pd(out + j + 12, s3);
  }
  for (; j + 4 <= cols; j += 4) {
    __m256d s = _mm256_setzero_pd();
    for (std::size_t i = 0; i < rows; ++i) s = _mm256_add_pd(s, _mm256_loadu_pd(x + i * cols + j));
    _mm256_storeu_pd(out + j, s);
  }
  for (; j < cols; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < rows; ++i) s += x[i * cols + j];
    out[j] = s;
  }
}

template <typename VecOp, typename ScalarOp>
inline void binary(std::size_t n, const double* a, const double* b, double* out, VecOp vop, ScalarOp sop) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, vop(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = sop(a[i], b[i]);
}

void add(std::size_t n, const double* a, const double* b, double* out) {
  binary(n, a, b, out, [](__m256d x, __m256d y) { return _mm256_add_pd(x, y); },
         [](double x, double y) { return x + y; });
}

void sub(std::size_t n, const double* a, const double* b, double* out) {
  binary(n, a, b, out, [](__m256d x, __m256d y) { return _mm256_sub_pd(x, y); },
         [](double x, double y) { return x - y; });
}

void mul(std::size_t n, const double* a, const double* b, double* out) {
  binary(n, a, b, out, [](__m256d x, __m256d y) { return _mm256_mul_pd(x, y); },
         [](double x, double y) { return x * y; });
}

void scale(std::size_t n, const double* a, double s, double* out) {
  const __m256d sv = _mm256_set1_pd(s);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), sv));
  for (; i < n; ++i) out[i] = a[i] * s;
}

void accumulate(std::size_t n, const double* x, double* acc) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(acc + i, _mm256_add_pd(_mm256_loadu_pd(acc + i), _mm256_loadu_pd(x + i)));
  }
  for (; i < n; ++i) acc[i] += x[i];
}

void relu(std::size_t n, const double* x, double* out) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_loadu_pd(x + i);
    const __m256d keep = _mm256_cmp_pd(v, zero, _CMP_GT_OQ);
    _mm256_storeu_pd(out + i, _mm256_and_pd(keep, v));
  }
  for (; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(std::size_t n, const double* x, const double* g, double* out) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d keep = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
    _mm256_storeu_pd(out + i, _mm256_and_pd(keep, _mm256_loadu_pd(g + i)));
  }
  for (; i < n; ++i) out[i] = x[i] > 0.0 ? g[i] : 0.0;
}

void adamw(std::size_t n, const AdamWArgs& args, const double* grad, double* param, double* m, double* v) {
  const double one_minus_b1 = 1.0 - args.beta1;
  const double one_minus_b2 = 1.0 - args.beta2;
  const __m256d b1 = _mm256_set1_pd(args.beta1);
  const __m256d b2 = _mm256_set1_pd(args.beta2);
  const __m256d omb1 = _mm256_set1_pd(one_minus_b1);
  const __m256d omb2 = _mm256_set1_pd(one_minus_b2);
  const __m256d bc1 = _mm256_set1_pd(args.bias_correction1);
  const __m256d bc2 = _mm256_set1_pd(args.bias_correction2);
  const __m256d eps = _mm256_set1_pd(args.eps);
  const __m256d wd = _mm256_set1_pd(args.weight_decay);
  const __m256d lr = _mm256_set1_pd(args.lr);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d g = _mm256_loadu_pd(grad + i);
    const __m256d p = _mm256_loadu_pd(param + i);
    const __m256d mi = _mm256_add_pd(_mm256_mul_pd(b1, _mm256_loadu_pd(m + i)), _mm256_mul_pd(omb1, g));
    const __m256d vi =
        _mm256_add_pd(_mm256_mul_pd(b2, _mm256_loadu_pd(v + i)), _mm256_mul_pd(omb2, _mm256_mul_pd(g, g)));
    _mm256_storeu_pd(m + i, mi);
    _mm256_storeu_pd(v + i, vi);
    const __m256d m_hat = _mm256_div_pd(mi, bc1);
    const __m256d v_hat = _mm256_div_pd(vi, bc2);
    const __m256d update =
        _mm256_add_pd(_mm256_div_pd(m_hat, _mm256_add_pd(_mm256_sqrt_pd(v_hat), eps)), _mm256_mul_pd(wd, p));
    _mm256_storeu_pd(param + i, _mm256_sub_pd(p, _mm256_mul_pd(lr, update)));
  }
  for (; i < n; ++i) {
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
  const __m256d d = _mm256_set1_pd(decay);
  const __m256d k = _mm256_set1_pd(keep);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d s = _mm256_add_pd(_mm256_mul_pd(d, _mm256_loadu_pd(shadow + i)),
                                    _mm256_mul_pd(k, _mm256_loadu_pd(param + i)));
    _mm256_storeu_pd(shadow + i, s);
  }
  for (; i < n; ++i) shadow[i] = decay * shadow[i] + keep * param[i];
}

}  // namespace

const KernelTable* avx2_kernels() {
  static const KernelTable table{
      "avx2", gemm, gemm_tn, col_sum, add, sub, mul, scale, accumulate, relu, relu_backward, adamw, ema,
  };
  static const bool supported = __builtin_cpu_supports("avx2");
  return supported ? &table : nullptr;
}

}  // namespace emi::kernels

#else

namespace emi::kernels {
const KernelTable* avx2_kernels() { return nullptr; }
}  // namespace emi::kernels

#endif
