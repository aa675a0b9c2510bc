#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ldrps/errors.hpp"
#include "ldrps/rng.hpp"
#include "ldrps/schedule.hpp"

using namespace ldrps;
using doctest::Approx;

TEST_CASE("constant beta products") {
  NoiseSchedule s3(3, 0.5, 0.5);
  CHECK(s3.alpha_bar(0) == 1.0);
  CHECK(s3.alpha_bar(1) == 0.5);
  CHECK(s3.alpha_bar(2) == 0.25);
  CHECK(s3.alpha_bar(3) == 0.125);

  NoiseSchedule s2(2, 0.1, 0.1);
  CHECK(s2.alpha_bar(1) == Approx(0.9).epsilon(1e-15));
  CHECK(s2.alpha_bar(2) == Approx(0.81).epsilon(1e-15));
  CHECK(s2.posterior_var(2) == Approx(0.1 / 0.19 * 0.1).epsilon(1e-12));
  CHECK(s2.posterior_var(2) == Approx(0.0526316).epsilon(1e-6));
  CHECK(s2.posterior_var(1) == 0.0);
}

TEST_CASE("linear schedule matches an extended-precision cumulative product") {
  NoiseSchedule s(1000, 1e-4, 0.02);
  long double abar = 1.0L;
  for (int t = 1; t <= 1000; ++t) {
    const long double beta = 1e-4L + (0.02L - 1e-4L) * (t - 1) / 999.0L;
    const long double prev = abar;
    abar *= 1.0L - beta;
    CHECK(std::abs(static_cast<long double>(s.beta(t)) - beta) < 1e-15L);
    CHECK(std::abs(static_cast<long double>(s.alpha_bar(t)) - abar) < 1e-10L);
    const long double var = (1.0L - prev) / (1.0L - abar) * beta;
    CHECK(std::abs(static_cast<long double>(s.posterior_var(t)) - var) < 1e-10L);
    CHECK(s.alpha(t) == 1.0 - s.beta(t));
    CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
    CHECK(s.posterior_var(t) >= 0.0);
  }
  CHECK(s.alpha_bar(1000) == Approx(4.0e-5).epsilon(0.02));
}

TEST_CASE("schedule rejects invalid configuration") {
  CHECK_THROWS_AS(NoiseSchedule(0, 1e-4, 0.02), ConfigError);
  CHECK_THROWS_AS(NoiseSchedule(10, 0.0, 0.02), ConfigError);
  CHECK_THROWS_AS(NoiseSchedule(10, 1e-4, 1.0), ConfigError);
  CHECK_THROWS_AS(NoiseSchedule(10, 0.3, 0.2), ConfigError);
}

TEST_CASE("ddim timestep plans") {
  NoiseSchedule s1000(1000, 1e-4, 0.02);
  const auto full = ddim_timesteps(s1000, 1000);
  REQUIRE(full.count() == 1000);
  for (int i = 0; i < 1000; ++i) CHECK(full.timesteps[static_cast<std::size_t>(i)] == 1000 - i);

  NoiseSchedule s10(10, 1e-4, 0.02);
  // even-stride enumeration oracle
  std::vector<int> oracle;
  for (int t = 10; t >= 1; t -= 2) oracle.push_back(t);
  CHECK(ddim_timesteps(s10, 5).timesteps == oracle);

  const auto p450 = ddim_timesteps(s1000, 450);
  CHECK(p450.count() == 450);
  CHECK(p450.timesteps.front() == 1000);
  CHECK(p450.timesteps.back() >= 1);
  for (std::size_t i = 1; i < p450.count(); ++i) CHECK(p450.timesteps[i] < p450.timesteps[i - 1]);

  const auto half = ddim_timesteps(s1000, 225, 500);
  CHECK(half.timesteps.front() == 500);
  CHECK(half.count() == 225);

  CHECK_THROWS_AS(ddim_timesteps(s10, 11), ConfigError);
  CHECK_THROWS_AS(ddim_timesteps(s10, 0), ConfigError);
}

TEST_CASE("forward diffusion closed forms") {
  NoiseSchedule s(2, 0.1, 0.1);
  Rng rng(3);
  const Tensor z0 = rng.normal_tensor({1, 4, 2, 2});
  const Tensor eps = rng.normal_tensor({1, 4, 2, 2});
  CHECK(forward_diffuse(z0, 0, eps, s).vec() == z0.vec());

  const Tensor zero({1, 4, 2, 2}, 0.0);
  const Tensor scaled = forward_diffuse(z0, 2, zero, s);
  for (std::size_t i = 0; i < z0.size(); ++i) CHECK(scaled[i] == Approx(std::sqrt(0.81) * z0[i]));

  const Tensor ones({1, 4, 2, 2}, 1.0);
  const Tensor noisy = forward_diffuse(zero, 2, ones, s);
  for (double v : noisy.vec()) CHECK(v == Approx(0.435890).epsilon(1e-6));

  CHECK_THROWS_AS(forward_diffuse(z0, 1, Tensor({1, 4, 2, 3}), s), UsageError);
}

TEST_CASE("predict_z0 inverts forward diffusion") {
  NoiseSchedule s(1000, 1e-4, 0.02);
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const int t = 1 + rng.index(1000);
    const Tensor z0 = rng.normal_tensor({1, 4, 8, 8});
    const Tensor eps = rng.normal_tensor({1, 4, 8, 8});
    const Tensor back = predict_z0(forward_diffuse(z0, t, eps, s), eps, t, s);
    for (std::size_t i = 0; i < z0.size(); ++i) {
      CHECK(std::abs(back[i] - z0[i]) <= 1e-5 * std::max(1.0, std::abs(z0[i])));
    }
  }
  // eps_hat = 0 -> z_t / sqrt(abar)
  NoiseSchedule q(4, 0.1, 0.1);
  const Tensor zt({1, 1, 1, 1}, 1.0);
  CHECK(predict_z0(zt, Tensor({1, 1, 1, 1}, 0.0), 2, q).item() == Approx(1.0 / 0.9));
  CHECK_THROWS_AS(predict_z0(zt, zt, 0, q), UsageError);
}

TEST_CASE("predict_z0 scalar case") {
  // abar_t = 0.25 with one step of beta 0.75
  NoiseSchedule s(1, 0.75, 0.75);
  const double got = predict_z0(Tensor({1, 1, 1, 1}, 1.0), Tensor({1, 1, 1, 1}, 0.5), 1, s).item();
  CHECK(got == Approx((1.0 - std::sqrt(0.75) * 0.5) / 0.5).epsilon(1e-12));
  CHECK(got == Approx(1.133975).epsilon(1e-6));
}

TEST_CASE("posterior mean and variance") {
  NoiseSchedule s(2, 0.1, 0.1);
  Rng rng(8);
  const Tensor zt = rng.normal_tensor({1, 4, 2, 2});
  const Tensor z0 = rng.normal_tensor({1, 4, 2, 2});

  const auto t1 = posterior_mean_var(zt, z0, 1, s);
  CHECK(t1.variance == 0.0);
  for (std::size_t i = 0; i < z0.size(); ++i) CHECK(t1.mean[i] == Approx(z0[i]).epsilon(1e-14));

  const auto t2 = posterior_mean_var(zt, z0, 2, s);
  CHECK(t2.variance == Approx(0.0526316).epsilon(1e-6));
  for (std::size_t i = 0; i < z0.size(); ++i) {
    CHECK(t2.mean[i] == Approx(0.499307 * z0[i] + 0.499307 * zt[i]).epsilon(1e-5));
  }

  Tensor zt3 = zt, z03 = z0;
  for (auto& v : zt3.vec()) v *= -2.5;
  for (auto& v : z03.vec()) v *= -2.5;
  const auto lin = posterior_mean_var(zt3, z03, 2, s);
  for (std::size_t i = 0; i < z0.size(); ++i) CHECK(lin.mean[i] == Approx(-2.5 * t2.mean[i]).epsilon(1e-13));
}

TEST_CASE("deterministic reverse chain with an exact noise oracle recovers z0") {
  NoiseSchedule s(1000, 1e-4, 0.02);
  Rng rng(13);
  const Tensor z0 = rng.normal_tensor({1, 4, 8, 8});
  const Tensor eps = rng.normal_tensor({1, 4, 8, 8});
  for (int steps : {1000, 450, 50}) {
    const auto plan = ddim_timesteps(s, steps);
    Tensor z = forward_diffuse(z0, plan.timesteps.front(), eps, s);
    for (std::size_t i = 0; i < plan.count(); ++i) {
      const int t = plan.timesteps[i];
      const int prev = i + 1 < plan.count() ? plan.timesteps[i + 1] : 0;
      // the noise that maps z0 to the current z_t
      Tensor e(z.shape());
      for (std::size_t k = 0; k < z.size(); ++k) {
        e[k] = (z[k] - std::sqrt(s.alpha_bar(t)) * z0[k]) / std::sqrt(1.0 - s.alpha_bar(t));
      }
      z = posterior_mean_var(z, predict_z0(z, e, t, s), t, prev, s).mean;
    }
    double err = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) err = std::max(err, std::abs(z[k] - z0[k]));
    CHECK(err < 1e-3);
  }
}

TEST_CASE("schedule hash distinguishes schedules") {
  CHECK(NoiseSchedule(1000, 1e-4, 0.02).hash() == NoiseSchedule(1000, 1e-4, 0.02).hash());
  CHECK(NoiseSchedule(1000, 1e-4, 0.02).hash() != NoiseSchedule(1000, 1e-4, 0.03).hash());
}
