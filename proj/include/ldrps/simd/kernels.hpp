#pragma once

// Numeric inner loops used by every layer. Each kernel has a scalar reference
// implementation and an AVX2+FMA variant; the variant is chosen once at
// startup from CPUID and can be pinned with LDRPS_SIMD=scalar|avx2.

#include <cstddef>
#include <span>
#include <string_view>

namespace ldrps::simd {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);

/// True when the running CPU can execute the given variant.
bool isa_supported(Isa isa);

/// Variant currently used by the free functions below.
Isa active_isa();

/// Pins the dispatch target. Throws std::invalid_argument if unsupported.
void set_active_isa(Isa isa);

/// Row-major C = alpha * op(A) * op(B) + beta * C, op(A) is M x K and op(B)
/// is K x N. With beta == 0, C is overwritten without being read.
struct GemmArgs {
  bool trans_a = false;
  bool trans_b = false;
  std::size_t m = 0, n = 0, k = 0;
  double alpha = 1.0;
  const double* a = nullptr;
  std::size_t lda = 0;
  const double* b = nullptr;
  std::size_t ldb = 0;
  double beta = 0.0;
  double* c = nullptr;
  std::size_t ldc = 0;
};

struct AdamArgs {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // bias corrections 1 - beta^step, precomputed by the caller
  double bias1 = 1.0;
  double bias2 = 1.0;
};

/// Table of kernel entry points for one ISA.
struct KernelTable {
  void (*gemm)(const GemmArgs&);
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  double (*dot)(const double* x, const double* y, std::size_t n);
  void (*scale)(double alpha, double* x, std::size_t n);
  // y[i] += x[i] * z[i]
  void (*mul_acc)(const double* x, const double* z, double* y, std::size_t n);
  void (*adam)(const AdamArgs& args, double* param, const double* grad,
               double* m, double* v, std::size_t n);
};

const KernelTable& table(Isa isa);

void gemm(const GemmArgs& args);
void axpy(double alpha, std::span<const double> x, std::span<double> y);
double dot(std::span<const double> x, std::span<const double> y);
void scale(double alpha, std::span<double> x);
void mul_acc(std::span<const double> x, std::span<const double> z, std::span<double> y);
void adam(const AdamArgs& args, std::span<double> param, std::span<const double> grad,
          std::span<double> m, std::span<double> v);

namespace detail {
const KernelTable& scalar_table();
const KernelTable* avx2_table();  // nullptr when not compiled in
}  // namespace detail

}  // namespace ldrps::simd
