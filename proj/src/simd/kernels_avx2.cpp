// Compiled with -mavx2 -mfma. Only reached through the dispatch table after a
// CPUID check, so nothing here may run on a CPU without AVX2.

#include "ldrps/simd/kernels.hpp"

#if defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <vector>

namespace ldrps::simd::detail {
namespace {

constexpr std::size_t kMr = 6;
constexpr std::size_t kNr = 8;
constexpr std::size_t kKc = 256;

inline double elem(const double* p, std::size_t ld, bool trans, std::size_t r, std::size_t c) {
  return trans ? p[c * ld + r] : p[r * ld + c];
}

// Packs rows [i0, i0+rows) x cols [k0, k0+kc) of op(A) into kMr-interleaved
// layout, zero padding the tail rows.
void pack_a(const GemmArgs& g, std::size_t i0, std::size_t rows, std::size_t k0, std::size_t kc,
            double* out) {
  for (std::size_t p = 0; p < kc; ++p) {
    for (std::size_t r = 0; r < kMr; ++r) {
      out[p * kMr + r] = r < rows ? elem(g.a, g.lda, g.trans_a, i0 + r, k0 + p) : 0.0;
    }
  }
}

// Packs op(B) rows [k0, k0+kc) into column panels of width kNr.
void pack_b(const GemmArgs& g, std::size_t k0, std::size_t kc, double* out) {
  const std::size_t panels = (g.n + kNr - 1) / kNr;
  for (std::size_t jp = 0; jp < panels; ++jp) {
    const std::size_t j0 = jp * kNr;
    const std::size_t cols = std::min(kNr, g.n - j0);
    double* dst = out + jp * kc * kNr;
    for (std::size_t p = 0; p < kc; ++p) {
      if (!g.trans_b && cols == kNr) {
        const double* src = g.b + (k0 + p) * g.ldb + j0;
        _mm256_storeu_pd(dst + p * kNr, _mm256_loadu_pd(src));
        _mm256_storeu_pd(dst + p * kNr + 4, _mm256_loadu_pd(src + 4));
        continue;
      }
      for (std::size_t c = 0; c < kNr; ++c) {
        dst[p * kNr + c] = c < cols ? elem(g.b, g.ldb, g.trans_b, k0 + p, j0 + c) : 0.0;
      }
    }
  }
}

// acc(6x8) = sum_p ap[p,:]^T bp[p,:]; C tile += alpha * acc
void micro_kernel(std::size_t kc, const double* ap, const double* bp, double alpha, double* c,
                  std::size_t ldc, std::size_t rows, std::size_t cols) {
  __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd();
  __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd();
  __m256d c20 = _mm256_setzero_pd(), c21 = _mm256_setzero_pd();
  __m256d c30 = _mm256_setzero_pd(), c31 = _mm256_setzero_pd();
  __m256d c40 = _mm256_setzero_pd(), c41 = _mm256_setzero_pd();
  __m256d c50 = _mm256_setzero_pd(), c51 = _mm256_setzero_pd();
  for (std::size_t p = 0; p < kc; ++p) {
    const __m256d b0 = _mm256_loadu_pd(bp + p * kNr);
    const __m256d b1 = _mm256_loadu_pd(bp + p * kNr + 4);
    const double* a = ap + p * kMr;
    __m256d av = _mm256_broadcast_sd(a + 0);
    c00 = _mm256_fmadd_pd(av, b0, c00);
    c01 = _mm256_fmadd_pd(av, b1, c01);
    av = _mm256_broadcast_sd(a + 1);
    c10 = _mm256_fmadd_pd(av, b0, c10);
    c11 = _mm256_fmadd_pd(av, b1, c11);
    av = _mm256_broadcast_sd(a + 2);
    c20 = _mm256_fmadd_pd(av, b0, c20);
    c21 = _mm256_fmadd_pd(av, b1, c21);
    av = _mm256_broadcast_sd(a + 3);
    c30 = _mm256_fmadd_pd(av, b0, c30);
    c31 = _mm256_fmadd_pd(av, b1, c31);
    av = _mm256_broadcast_sd(a + 4);
    c40 = _mm256_fmadd_pd(av, b0, c40);
    c41 = _mm256_fmadd_pd(av, b1, c41);
    av = _mm256_broadcast_sd(a + 5);
    c50 = _mm256_fmadd_pd(av, b0, c50);
    c51 = _mm256_fmadd_pd(av, b1, c51);
  }
  alignas(32) double acc[kMr * kNr];
  _mm256_store_pd(acc + 0, c00);
  _mm256_store_pd(acc + 4, c01);
  _mm256_store_pd(acc + 8, c10);
  _mm256_store_pd(acc + 12, c11);
  _mm256_store_pd(acc + 16, c20);
  _mm256_store_pd(acc + 20, c21);
  _mm256_store_pd(acc + 24, c30);
  _mm256_store_pd(acc + 28, c31);
  _mm256_store_pd(acc + 32, c40);
  _mm256_store_pd(acc + 36, c41);
  _mm256_store_pd(acc + 40, c50);
  _mm256_store_pd(acc + 44, c51);

  const __m256d va = _mm256_set1_pd(alpha);
  for (std::size_t r = 0; r < rows; ++r) {
    double* crow = c + r * ldc;
    const double* arow = acc + r * kNr;
    if (cols == kNr) {
      _mm256_storeu_pd(crow, _mm256_fmadd_pd(va, _mm256_load_pd(arow), _mm256_loadu_pd(crow)));
      _mm256_storeu_pd(crow + 4,
                       _mm256_fmadd_pd(va, _mm256_load_pd(arow + 4), _mm256_loadu_pd(crow + 4)));
    } else {
      for (std::size_t j = 0; j < cols; ++j) crow[j] = std::fma(alpha, arow[j], crow[j]);
    }
  }
}

void gemm_avx2(const GemmArgs& g) {
  for (std::size_t i = 0; i < g.m; ++i) {
    double* crow = g.c + i * g.ldc;
    if (g.beta == 0.0) {
      std::fill(crow, crow + g.n, 0.0);
    } else if (g.beta != 1.0) {
      for (std::size_t j = 0; j < g.n; ++j) crow[j] *= g.beta;
    }
  }
  if (g.k == 0 || g.m == 0 || g.n == 0) return;

  const std::size_t npanels = (g.n + kNr - 1) / kNr;
  thread_local std::vector<double> bpack;
  thread_local std::vector<double> apack;
  apack.resize(kMr * kKc);
  for (std::size_t k0 = 0; k0 < g.k; k0 += kKc) {
    const std::size_t kc = std::min(kKc, g.k - k0);
    bpack.resize(npanels * kc * kNr);
    pack_b(g, k0, kc, bpack.data());
    for (std::size_t i0 = 0; i0 < g.m; i0 += kMr) {
      const std::size_t rows = std::min(kMr, g.m - i0);
      pack_a(g, i0, rows, k0, kc, apack.data());
      for (std::size_t jp = 0; jp < npanels; ++jp) {
        const std::size_t j0 = jp * kNr;
        micro_kernel(kc, apack.data(), bpack.data() + jp * kc * kNr, g.alpha,
                     g.c + i0 * g.ldc + j0, g.ldc, rows, std::min(kNr, g.n - j0));
      }
    }
  }
}

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

double dot_avx2(const double* x, const double* y, std::size_t n) {
  __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
    s1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), s1);
  }
  double s = hsum(_mm256_add_pd(s0, s1));
  for (; i < n; ++i) s = std::fma(x[i], y[i], s);
  return s;
}

void scale_avx2(double alpha, double* x, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(x + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) x[i] *= alpha;
}

void mul_acc_avx2(const double* x, const double* z, double* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(z + i),
                                            _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] = std::fma(x[i], z[i], y[i]);
}

void adam_avx2(const AdamArgs& a, double* param, const double* grad, double* m, double* v,
               std::size_t n) {
  const __m256d b1 = _mm256_set1_pd(a.beta1);
  const __m256d b1c = _mm256_set1_pd(1.0 - a.beta1);
  const __m256d b2 = _mm256_set1_pd(a.beta2);
  const __m256d b2c = _mm256_set1_pd(1.0 - a.beta2);
  const __m256d c1 = _mm256_set1_pd(1.0 / a.bias1);
  const __m256d c2 = _mm256_set1_pd(1.0 / a.bias2);
  const __m256d lr = _mm256_set1_pd(a.lr);
  const __m256d eps = _mm256_set1_pd(a.eps);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d gr = _mm256_loadu_pd(grad + i);
    const __m256d mi = _mm256_add_pd(_mm256_mul_pd(b1, _mm256_loadu_pd(m + i)), _mm256_mul_pd(b1c, gr));
    const __m256d vi = _mm256_add_pd(_mm256_mul_pd(b2, _mm256_loadu_pd(v + i)),
                                     _mm256_mul_pd(b2c, _mm256_mul_pd(gr, gr)));
    _mm256_storeu_pd(m + i, mi);
    _mm256_storeu_pd(v + i, vi);
    const __m256d mhat = _mm256_mul_pd(mi, c1);
    const __m256d vhat = _mm256_mul_pd(vi, c2);
    const __m256d step = _mm256_div_pd(_mm256_mul_pd(lr, mhat), _mm256_add_pd(_mm256_sqrt_pd(vhat), eps));
    _mm256_storeu_pd(param + i, _mm256_sub_pd(_mm256_loadu_pd(param + i), step));
  }
  const double s1 = 1.0 / a.bias1;
  const double s2 = 1.0 / a.bias2;
  for (; i < n; ++i) {
    m[i] = a.beta1 * m[i] + (1.0 - a.beta1) * grad[i];
    v[i] = a.beta2 * v[i] + (1.0 - a.beta2) * (grad[i] * grad[i]);
    param[i] -= (a.lr * (m[i] * s1)) / (std::sqrt(v[i] * s2) + a.eps);
  }
}

}  // namespace

const KernelTable* avx2_table() {
  static const KernelTable t{gemm_avx2, axpy_avx2, dot_avx2, scale_avx2, mul_acc_avx2, adam_avx2};
  return &t;
}

}  // namespace ldrps::simd::detail

#else

namespace ldrps::simd::detail {
const KernelTable* avx2_table() { return nullptr; }
}  // namespace ldrps::simd::detail

#endif
