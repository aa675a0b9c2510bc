#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "ldrps/errors.hpp"
#include "ldrps/sampler.hpp"

using namespace ldrps;
using namespace ldrps::models;
using namespace ldrps::sampler;
using doctest::Approx;

namespace {

double sort_oracle_k(std::vector<double> mags, double s) {
  for (auto& v : mags) v = std::abs(v);
  std::sort(mags.begin(), mags.end());
  const auto rank = static_cast<std::size_t>(std::ceil(s * static_cast<double>(mags.size())));
  return mags[std::max<std::size_t>(rank, 1) - 1];
}

void jitter(nn::ParamStore& store, std::uint64_t seed, double amount) {
  Rng rng(seed, "jitter");
  for (const auto& [name, v] : store.entries()) {
    for (auto& x : v.node().value.vec()) x += amount * rng.normal();
  }
}

struct Stack {
  Autoencoder ae{61};
  Denoiser den{4, 62};
  PerceptualExtractor v{63};
  NoiseSchedule sched{60, 1e-3, 0.2};

  Stack() {
    jitter(den.params(), 64, 0.03);
    den.max_timestep = sched.steps();
  }
  ModelSet models() const { return {&ae, &den, &v}; }
};

RestoreConfig small_config() {
  RestoreConfig cfg;
  cfg.sampler.steps = 12;
  return cfg;
}

Tensor test_image(std::uint64_t seed) {
  Rng rng(seed);
  Tensor y({1, 3, 16, 16});
  for (auto& v : y.vec()) v = rng.uniform(0.1, 0.6);
  return y;
}

}  // namespace

TEST_CASE("threshold example and no-op cases") {
  const Tensor z({1, 5, 1, 1}, std::vector<double>{-10, -1, 0, 1, 2});
  const ThresholdResult r = dynamic_threshold(z, 0.8);
  CHECK(r.k[0] == 2.0);
  CHECK(r.z.vec() == std::vector<double>{-2, -1, 0, 1, 2});

  Rng rng(1);
  const Tensor x = rng.normal_tensor({3, 4, 8, 8});
  CHECK(dynamic_threshold(x, 1.0).z.vec() == x.vec());

  const Tensor small({1, 4, 1, 1}, std::vector<double>{0.5, -0.5, 0.5, -0.5});
  CHECK(dynamic_threshold(small, 0.3).z.vec() == small.vec());

  CHECK_THROWS_AS(dynamic_threshold(x, 0.0), ConfigError);
  CHECK_THROWS_AS(dynamic_threshold(x, 1.5), ConfigError);
}

TEST_CASE("threshold equals the sort-based nearest-rank oracle") {
  Rng rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    const double s = trial % 3 == 0 ? 0.995 : rng.uniform(0.5, 1.0);
    Tensor z = rng.normal_tensor({2, 4, 4, 4});
    for (auto& v : z.vec()) v *= 1.0 + 4.0 * rng.uniform();
    const ThresholdResult r = dynamic_threshold(z, s);
    for (int n = 0; n < 2; ++n) {
      const Tensor item = z.slice_batch(n, 1);
      const double k = sort_oracle_k(item.vec(), s);
      REQUIRE(r.k[static_cast<std::size_t>(n)] == k);
      const double* out = r.z.sample(n);
      for (std::size_t i = 0; i < item.size(); ++i) {
        REQUIRE(out[i] == std::clamp(item[i], -k, k));
        REQUIRE(std::abs(out[i]) <= k);
      }
    }
  }
}

TEST_CASE("pass plans") {
  const NoiseSchedule sched(1000, 1e-4, 0.02);
  SamplerConfig cfg;
  const TimestepPlan p0 = pass_plan(0, cfg, sched);
  CHECK(p0.count() == 450);
  CHECK(p0.timesteps.front() == 1000);
  const TimestepPlan p1 = pass_plan(1, cfg, sched);
  CHECK(p1.timesteps.front() == 500);
  CHECK(p1.count() == 225);
  CHECK(p1.timesteps.back() >= 1);
}

TEST_CASE("recurrence init diffuses to gamma T with fresh noise") {
  Autoencoder ae(3);
  const NoiseSchedule sched(1000, 1e-4, 0.02);
  Rng rng(4);
  Tensor x({1, 3, 16, 16});
  for (auto& v : x.vec()) v = rng.uniform(-1.0, 1.0);
  const Tensor z0 = ae.encode(x);
  const double ab = sched.alpha_bar(500);

  const int draws = 1000;
  std::vector<double> sum(z0.size(), 0.0), sq(z0.size(), 0.0);
  for (int d = 0; d < draws; ++d) {
    const Tensor z = recurrence_init(x, 0.5, sched, ae, rng);
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double r = z[i] - std::sqrt(ab) * z0[i];
      sum[i] += r;
      sq[i] += r * r;
    }
  }
  for (std::size_t i = 0; i < z0.size(); ++i) {
    const double mean = sum[i] / draws;
    const double var = sq[i] / draws - mean * mean;
    CHECK(var == Approx(1.0 - ab).epsilon(0.1));
  }

  // gamma -> 0 clamps to t = 1: almost no noise
  const Tensor near = recurrence_init(x, 1e-9, sched, ae, rng);
  for (std::size_t i = 0; i < near.size(); ++i) CHECK(std::abs(near[i] - z0[i]) < 0.1);
}

TEST_CASE("stage-one step follows the unguided posterior mean exactly") {
  Stack s;
  const RestoreConfig cfg = small_config();
  RunState state(cfg, 5);
  Rng rng(6);
  const Tensor z = rng.normal_tensor({1, 4, 4, 4});
  const Tensor zf = rng.normal_tensor({1, 4, 4, 4});
  const Tensor y = Tensor({1, 3, 16, 16}, -0.2);
  const int t = 55, t_prev = 50;
  REQUIRE_FALSE(cfg.guidance.guided(t, s.sched.steps()));
  const StepOutput out = guided_reverse_step(z, zf, t, t_prev, y, {}, s.models(), state, cfg, s.sched);
  CHECK_FALSE(out.record.guided);
  CHECK(out.record.g_norm == 0.0);
  CHECK_FALSE(out.record.L.has_value());

  // reference: same predictions and noise streams, no guidance term
  const Tensor pair = Tensor::concat_batch(z, zf);
  const Tensor z0 = dynamic_threshold(predict_z0(pair, s.den.predict(pair, t, {}), t, s.sched), cfg.guidance.s).z;
  const PosteriorCoefs pc = posterior_coefs(s.sched, t, t_prev);
  Rng g_rng(5, "guided"), f_rng(5, "free");
  const Tensor ng = g_rng.normal_tensor(z.shape());
  const Tensor nf = f_rng.normal_tensor(z.shape());
  const double sd = std::sqrt(pc.variance);
  for (std::size_t i = 0; i < z.size(); ++i) {
    CHECK(out.z[i] == pc.coef_z0 * z0[i] + pc.coef_zt * z[i] + 0.0 * 0.0 + sd * ng[i]);
    CHECK(out.z_free[i] == pc.coef_z0 * z0[z.size() + i] + pc.coef_zt * zf[i] + sd * nf[i]);
  }
}

TEST_CASE("zero-variance unguided steps are deterministic") {
  Stack s;
  RestoreConfig cfg = small_config();
  cfg.sampler.variance = Variance::zero;
  Rng rng(7);
  const Tensor z = rng.normal_tensor({1, 4, 4, 4});
  const Tensor y = Tensor({1, 3, 16, 16}, 0.1);
  RunState a(cfg, 1), b(cfg, 2);
  const StepOutput oa = guided_reverse_step(z, z, 58, 53, y, {}, s.models(), a, cfg, s.sched);
  const StepOutput ob = guided_reverse_step(z, z, 58, 53, y, {}, s.models(), b, cfg, s.sched);
  CHECK(oa.z.vec() == ob.z.vec());
  CHECK(oa.z.vec() == oa.z_free.vec());
}

TEST_CASE("guided-stage step records losses and trains D2") {
  Stack s;
  const RestoreConfig cfg = small_config();
  RunState state(cfg, 8);
  Rng rng(9);
  const Tensor z = rng.normal_tensor({1, 4, 4, 4});
  const auto d2_sum = state.d2.params().checksum();
  const StepOutput out = guided_reverse_step(z, z, 5, 0, Tensor({1, 3, 16, 16}, -0.4), {}, s.models(), state, cfg,
                                             s.sched);
  CHECK(out.record.guided);
  CHECK(out.record.L.has_value());
  CHECK(out.record.Q.has_value());
  CHECK(out.record.L_dis.has_value());
  CHECK(out.record.g_norm > 0.0);
  CHECK(state.d2.params().checksum() != d2_sum);
}

TEST_CASE("restore runs n + 1 passes with stage discipline") {
  Stack s;
  RestoreConfig cfg = small_config();
  cfg.sampler.recurrence.n = 2;
  const RestoreResult r = restore(test_image(10), ConditioningToken{2}, s.models(), cfg, s.sched, 11);
  REQUIRE(r.trace.intermediates.size() == 3);
  CHECK(r.image.vec() == r.trace.intermediates.back().vec());
  CHECK(r.image.shape() == Shape{1, 3, 16, 16});
  for (double v : r.image.vec()) CHECK((v >= 0.0 && v <= 1.0));

  std::size_t expected = 0;
  for (int p = 0; p <= 2; ++p) expected += pass_plan(p, cfg.sampler, s.sched).count();
  CHECK(r.trace.records.size() == expected);

  const int T = s.sched.steps();
  for (const auto& rec : r.trace.records) {
    if (rec.t > cfg.guidance.stage1_frac * T) {
      CHECK(rec.g_norm == 0.0);
      CHECK_FALSE(rec.guided);
    }
    CHECK(rec.Q.has_value() == (rec.t < cfg.guidance.quality_frac * T));
  }
  CHECK(r.trace.records.front().t == T);
  const auto second = std::find_if(r.trace.records.begin(), r.trace.records.end(),
                                   [](const TraceRecord& rec) { return rec.recurrence == 1; });
  REQUIRE(second != r.trace.records.end());
  CHECK(second->t == 30);
}

TEST_CASE("restore is deterministic in its seed") {
  Stack s;
  const RestoreConfig cfg = small_config();
  const Tensor y = test_image(12);
  const RestoreResult a = restore(y, {}, s.models(), cfg, s.sched, 13);
  const RestoreResult b = restore(y, {}, s.models(), cfg, s.sched, 13);
  const RestoreResult c = restore(y, {}, s.models(), cfg, s.sched, 14);
  CHECK(a.image.vec() == b.image.vec());
  CHECK(a.image.vec() != c.image.vec());
}

TEST_CASE("guided_lr_scale slows psi and D1 only once guidance is on") {
  Stack s;
  RestoreConfig cfg = small_config();
  cfg.fpam.guided_lr_scale = 0.0;
  RunState state(cfg, 8);
  Rng rng(10);
  const Tensor z = rng.normal_tensor({1, 4, 4, 4});
  const Tensor y({1, 3, 16, 16}, -0.4);

  // the fresh D1 is constant, so psi first moves on the second unguided step
  guided_reverse_step(z, z, 55, 50, y, {}, s.models(), state, cfg, s.sched);
  auto psi_sum = state.psi.params().checksum();
  auto d1_sum = state.d1.params().checksum();
  guided_reverse_step(z, z, 50, 45, y, {}, s.models(), state, cfg, s.sched);  // 50 > 0.7 * 60
  CHECK(state.psi.params().checksum() != psi_sum);
  CHECK(state.d1.params().checksum() != d1_sum);

  psi_sum = state.psi.params().checksum();
  d1_sum = state.d1.params().checksum();
  guided_reverse_step(z, z, 40, 35, y, {}, s.models(), state, cfg, s.sched);
  CHECK(state.psi.params().checksum() == psi_sum);
  CHECK(state.d1.params().checksum() == d1_sum);
  CHECK(state.psi.optimizer().lr() == 0.0);
}

TEST_CASE("restore validates input and config") {
  Stack s;
  RestoreConfig cfg = small_config();
  CHECK_THROWS_AS(restore(Tensor({1, 3, 15, 16}, 0.5), {}, s.models(), cfg, s.sched, 1), UsageError);
  cfg.sampler.steps = 61;
  CHECK_THROWS_AS(restore(test_image(1), {}, s.models(), cfg, s.sched, 1), ConfigError);
  cfg = small_config();
  cfg.sampler.recurrence.gamma = 1.0;
  CHECK_THROWS_AS(restore(test_image(1), {}, s.models(), cfg, s.sched, 1), ConfigError);
  cfg = small_config();
  cfg.fpam.guided_lr_scale = 1.5;
  CHECK_THROWS_AS(restore(test_image(1), {}, s.models(), cfg, s.sched, 1), ConfigError);
}

TEST_CASE("numerical failures name the pass and step") {
  Stack s;
  Tensor y = test_image(15);
  y[0] = std::numeric_limits<double>::quiet_NaN();
  const RestoreConfig cfg = small_config();
  try {
    restore(y, {}, s.models(), cfg, s.sched, 1);
    FAIL("expected a numerical error");
  } catch (const NumericalError& e) {
    const std::string what = e.what();
    CHECK(what.find("recurrence 0, step") != std::string::npos);
  }
}

TEST_CASE("trace csv has one row per record") {
  Stack s;
  const RestoreConfig cfg = small_config();
  const RestoreResult r = restore(test_image(16), {}, s.models(), cfg, s.sched, 2);
  const auto path = std::filesystem::temp_directory_path() / "ldrps_test_trace.csv";
  r.trace.write_csv(path);
  std::ifstream in(path);
  std::string header, line;
  std::getline(in, header);
  CHECK(header == "recurrence,step,t,guided,L,Q,S_psi,S_dis,L_dis,g_norm,k,k_free");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == r.trace.records.size());
  std::filesystem::remove(path);
}
