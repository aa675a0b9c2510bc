#include "ldrps/simd/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace ldrps::simd {
namespace {

Isa detect() {
  if (const char* env = std::getenv("LDRPS_SIMD")) {
    const std::string want(env);
    if (want == "scalar") return Isa::scalar;
    if (want == "avx2" && isa_supported(Isa::avx2)) return Isa::avx2;
  }
  return isa_supported(Isa::avx2) ? Isa::avx2 : Isa::scalar;
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> t{&table(detect())};
  return t;
}

}  // namespace

std::string_view isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

bool isa_supported(Isa isa) {
  if (isa == Isa::scalar) return true;
#if defined(__x86_64__) || defined(__i386__)
  if (detail::avx2_table() == nullptr) return false;
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable& table(Isa isa) {
  if (isa == Isa::avx2) {
    if (!isa_supported(Isa::avx2)) throw std::invalid_argument("AVX2 kernels unavailable on this CPU");
    return *detail::avx2_table();
  }
  return detail::scalar_table();
}

Isa active_isa() {
  return current().load() == &detail::scalar_table() ? Isa::scalar : Isa::avx2;
}

void set_active_isa(Isa isa) { current().store(&table(isa)); }

void gemm(const GemmArgs& args) { current().load()->gemm(args); }

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  current().load()->axpy(alpha, x.data(), y.data(), x.size());
}

double dot(std::span<const double> x, std::span<const double> y) {
  return current().load()->dot(x.data(), y.data(), x.size());
}

void scale(double alpha, std::span<double> x) { current().load()->scale(alpha, x.data(), x.size()); }

void mul_acc(std::span<const double> x, std::span<const double> z, std::span<double> y) {
  current().load()->mul_acc(x.data(), z.data(), y.data(), x.size());
}

void adam(const AdamArgs& args, std::span<double> param, std::span<const double> grad,
          std::span<double> m, std::span<double> v) {
  current().load()->adam(args, param.data(), grad.data(), m.data(), v.data(), param.size());
}

}  // namespace ldrps::simd
