#include "ldrps/simd/kernels.hpp"

#include <cmath>

namespace ldrps::simd::detail {
namespace {

inline double at(const double* p, std::size_t ld, bool trans, std::size_t r, std::size_t c) {
  return trans ? p[c * ld + r] : p[r * ld + c];
}

void gemm_scalar(const GemmArgs& g) {
  for (std::size_t i = 0; i < g.m; ++i) {
    double* crow = g.c + i * g.ldc;
    if (g.beta == 0.0) {
      for (std::size_t j = 0; j < g.n; ++j) crow[j] = 0.0;
    } else if (g.beta != 1.0) {
      for (std::size_t j = 0; j < g.n; ++j) crow[j] *= g.beta;
    }
    for (std::size_t p = 0; p < g.k; ++p) {
      const double aip = g.alpha * at(g.a, g.lda, g.trans_a, i, p);
      if (!g.trans_b) {
        const double* brow = g.b + p * g.ldb;
        for (std::size_t j = 0; j < g.n; ++j) crow[j] += aip * brow[j];
      } else {
        for (std::size_t j = 0; j < g.n; ++j) crow[j] += aip * g.b[j * g.ldb + p];
      }
    }
  }
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

double dot_scalar(const double* x, const double* y, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

void scale_scalar(double alpha, double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] *= alpha;
}

void mul_acc_scalar(const double* x, const double* z, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += x[i] * z[i];
}

void adam_scalar(const AdamArgs& a, double* param, const double* grad, double* m, double* v,
                 std::size_t n) {
  const double c1 = 1.0 / a.bias1;
  const double c2 = 1.0 / a.bias2;
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = a.beta1 * m[i] + (1.0 - a.beta1) * grad[i];
    v[i] = a.beta2 * v[i] + (1.0 - a.beta2) * grad[i] * grad[i];
    const double mhat = m[i] * c1;
    const double vhat = v[i] * c2;
    param[i] -= a.lr * mhat / (std::sqrt(vhat) + a.eps);
  }
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable t{gemm_scalar, axpy_scalar,    dot_scalar,
                             scale_scalar, mul_acc_scalar, adam_scalar};
  return t;
}

}  // namespace ldrps::simd::detail
