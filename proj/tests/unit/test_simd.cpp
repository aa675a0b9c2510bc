#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "ldrps/simd/kernels.hpp"

using namespace ldrps::simd;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> d;
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

double max_rel_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a[i] - b[i]) / (1.0 + std::abs(a[i])));
  }
  return m;
}

// Independent triple-loop oracle used to check both variants.
void naive_gemm(const GemmArgs& g) {
  for (std::size_t i = 0; i < g.m; ++i)
    for (std::size_t j = 0; j < g.n; ++j) {
      long double s = 0.0L;
      for (std::size_t p = 0; p < g.k; ++p) {
        const double a = g.trans_a ? g.a[p * g.lda + i] : g.a[i * g.lda + p];
        const double b = g.trans_b ? g.b[j * g.ldb + p] : g.b[p * g.ldb + j];
        s += static_cast<long double>(a) * b;
      }
      const double prev = g.beta == 0.0 ? 0.0 : g.beta * g.c[i * g.ldc + j];
      g.c[i * g.ldc + j] = static_cast<double>(g.alpha * s + prev);
    }
}

}  // namespace

TEST_CASE("scalar table is always available") {
  CHECK(isa_supported(Isa::scalar));
  CHECK(isa_name(Isa::scalar) == "scalar");
}

TEST_CASE("gemm variants agree with the long-double oracle for all transposes and ragged sizes") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::size_t> dim(1, 70);
  std::vector<Isa> isas{Isa::scalar};
  if (isa_supported(Isa::avx2)) isas.push_back(Isa::avx2);

  for (int trial = 0; trial < 60; ++trial) {
    GemmArgs g;
    g.trans_a = trial & 1;
    g.trans_b = (trial >> 1) & 1;
    g.m = dim(rng);
    g.n = dim(rng);
    g.k = trial % 7 == 0 ? 300 + dim(rng) : dim(rng);  // crosses the K block boundary
    g.alpha = trial % 3 == 0 ? 1.0 : 0.75;
    g.beta = trial % 4 == 0 ? 0.0 : (trial % 4 == 1 ? 1.0 : -0.5);
    const std::size_t rows_a = g.trans_a ? g.k : g.m, cols_a = g.trans_a ? g.m : g.k;
    const std::size_t rows_b = g.trans_b ? g.n : g.k, cols_b = g.trans_b ? g.k : g.n;
    g.lda = cols_a + 3;
    g.ldb = cols_b + 1;
    g.ldc = g.n + 2;
    auto a = random_vec(rows_a * g.lda, rng);
    auto b = random_vec(rows_b * g.ldb, rng);
    auto c0 = random_vec(g.m * g.ldc, rng);
    g.a = a.data();
    g.b = b.data();

    auto expect = c0;
    GemmArgs ge = g;
    ge.c = expect.data();
    naive_gemm(ge);

    for (Isa isa : isas) {
      auto got = c0;
      GemmArgs gg = g;
      gg.c = got.data();
      table(isa).gemm(gg);
      INFO("isa=" << isa_name(isa) << " m=" << g.m << " n=" << g.n << " k=" << g.k);
      CHECK(max_rel_diff(expect, got) < 1e-12);
    }
  }
}

TEST_CASE("gemm with beta 0 ignores NaN garbage in C") {
  std::vector<double> a{1, 2, 3, 4}, b{1, 0, 0, 1};
  for (Isa isa : {Isa::scalar, Isa::avx2}) {
    if (!isa_supported(isa)) continue;
    std::vector<double> c(4, std::nan(""));
    table(isa).gemm({false, false, 2, 2, 2, 1.0, a.data(), 2, b.data(), 2, 0.0, c.data(), 2});
    CHECK(c == a);
  }
}

TEST_CASE("vector kernels agree across variants") {
  if (!isa_supported(Isa::avx2)) return;
  const KernelTable& s = table(Isa::scalar);
  const KernelTable& v = table(Isa::avx2);
  std::mt19937_64 rng(11);
  for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 8u, 9u, 31u, 257u}) {
    auto x = random_vec(n, rng), y = random_vec(n, rng), z = random_vec(n, rng);

    auto ys = y, yv = y;
    s.axpy(0.3, x.data(), ys.data(), n);
    v.axpy(0.3, x.data(), yv.data(), n);
    CHECK(max_rel_diff(ys, yv) < 1e-14);

    const double ds = s.dot(x.data(), y.data(), n), dv = v.dot(x.data(), y.data(), n);
    CHECK(std::abs(ds - dv) <= 1e-12 * (1.0 + std::abs(ds)));

    auto xs = x, xv = x;
    s.scale(-1.7, xs.data(), n);
    v.scale(-1.7, xv.data(), n);
    CHECK(xs == xv);

    ys = y;
    yv = y;
    s.mul_acc(x.data(), z.data(), ys.data(), n);
    v.mul_acc(x.data(), z.data(), yv.data(), n);
    CHECK(max_rel_diff(ys, yv) < 1e-14);

    AdamArgs args;
    args.lr = 1e-2;
    args.bias1 = 0.1;
    args.bias2 = 0.001;
    auto ps = x, pv = x;
    std::vector<double> ms(n, 0.1), vs(n, 0.2), mv = ms, vv = vs;
    s.adam(args, ps.data(), y.data(), ms.data(), vs.data(), n);
    v.adam(args, pv.data(), y.data(), mv.data(), vv.data(), n);
    CHECK(max_rel_diff(ps, pv) < 1e-14);
    CHECK(max_rel_diff(ms, mv) < 1e-14);
    CHECK(max_rel_diff(vs, vv) < 1e-14);
  }
}

TEST_CASE("active isa can be pinned and restored") {
  const Isa before = active_isa();
  set_active_isa(Isa::scalar);
  CHECK(active_isa() == Isa::scalar);
  set_active_isa(before);
  CHECK(active_isa() == before);
}
