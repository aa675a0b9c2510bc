#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "ldrps/errors.hpp"
#include "ldrps/models.hpp"
#include "ldrps/schedule.hpp"

using namespace ldrps;
using namespace ldrps::models;

namespace {

// Zero-initialised layers make fresh gradients trivially zero; perturb everything.
void jitter(nn::ParamStore& store, std::uint64_t seed, double amount) {
  Rng rng(seed, "jitter");
  for (const auto& [name, v] : store.entries()) {
    for (auto& x : v.node().value.vec()) x += amount * rng.normal();
  }
}

Tensor random_image(int n, int size, std::uint64_t seed) {
  Rng rng(seed, "img");
  Tensor x({n, 3, size, size});
  for (auto& v : x.vec()) v = rng.uniform(-1.0, 1.0);
  return x;
}

}  // namespace

TEST_CASE("autoencoder shapes, range and determinism") {
  Autoencoder ae(1);
  const Tensor x = random_image(1, 32, 2);
  const Tensor z = ae.encode(x);
  CHECK(z.shape() == Shape{1, 4, 8, 8});
  const Tensor x2 = ae.decode(z);
  CHECK(x2.shape() == Shape{1, 3, 32, 32});
  CHECK(x2.max_abs() <= 1.0);
  CHECK(ae.decode(z).vec() == x2.vec());

  const Tensor zb = ae.encode(random_image(2, 32, 3));
  CHECK(zb.shape().n == 2);

  CHECK_THROWS_AS(ae.encode(Tensor({1, 3, 30, 32})), UsageError);
  CHECK_THROWS_AS(ae.encode(Tensor({1, 1, 32, 32})), UsageError);
  CHECK_THROWS_AS(ae.decode(Tensor({1, 3, 8, 8})), UsageError);
}

TEST_CASE("latent scale multiplies codes and divides decoder input") {
  Autoencoder ae(1);
  const Tensor x = random_image(1, 16, 4);
  const Tensor z1 = ae.encode(x);
  const Tensor d1 = ae.decode(z1);
  ae.latent_scale = 2.0;
  const Tensor z2 = ae.encode(x);
  for (std::size_t i = 0; i < z1.size(); ++i) CHECK(z2[i] == doctest::Approx(2.0 * z1[i]).epsilon(1e-14));
  const Tensor d2 = ae.decode(z2);
  for (std::size_t i = 0; i < d1.size(); ++i) CHECK(d2[i] == doctest::Approx(d1[i]).epsilon(1e-12));
}

TEST_CASE("timestep embedding") {
  const Tensor e = timestep_embedding({0, 7}, 8);
  CHECK(e.shape() == Shape{2, 8, 1, 1});
  for (int i = 0; i < 4; ++i) {
    CHECK(e.at(0, i, 0, 0) == 0.0);
    CHECK(e.at(0, 4 + i, 0, 0) == 1.0);
  }
  CHECK(e.at(1, 0, 0, 0) == doctest::Approx(std::sin(7.0)));
}

TEST_CASE("denoiser preserves latent shape and validates inputs") {
  Denoiser d(4, 3);
  Rng rng(5);
  const Tensor z = rng.normal_tensor({2, 4, 8, 8});
  const Tensor eps = d.predict(z, 10, ConditioningToken{1});
  CHECK(eps.shape() == z.shape());
  // zero-initialised output conv: a fresh model predicts no noise
  CHECK(eps.max_abs() == 0.0);

  CHECK_THROWS_AS(d.predict(z, 0, {}), UsageError);
  CHECK_THROWS_AS(d.predict(z, d.max_timestep + 1, {}), UsageError);
  CHECK_THROWS_AS(d.predict(z, 5, ConditioningToken{4}), UsageError);
  CHECK_THROWS_AS(d.predict(rng.normal_tensor({1, 3, 8, 8}), 5, {}), UsageError);
  CHECK_THROWS_AS(d.predict(rng.normal_tensor({1, 4, 7, 8}), 5, {}), UsageError);
  CHECK_THROWS_AS(d.forward(ad::constant(z), {1}, {ConditioningToken{}}), UsageError);
  CHECK_THROWS_AS(Denoiser(0, 1), ConfigError);
}

TEST_CASE("denoiser input gradient matches finite differences on a 4x4 latent") {
  Denoiser d(4, 7);
  jitter(d.params(), 11, 0.05);
  Rng rng(9);
  const Tensor z = rng.normal_tensor({1, 4, 4, 4});
  const Tensor wts = rng.normal_tensor({1, 4, 4, 4});
  auto fn = [&](const ad::Var& zv) {
    return ad::sum(ad::mul(d.forward(zv, {250}, {ConditioningToken{2}}), ad::constant(wts)));
  };
  const auto r = testing::gradcheck(fn, z, 1e-5);
  CHECK(r.rel_err < 1e-6);
}

TEST_CASE("gradient through decode of predicted z0 matches finite differences") {
  Autoencoder ae(2);
  Denoiser d(4, 3);
  jitter(d.params(), 12, 0.05);
  const NoiseSchedule sched(1000, 1e-4, 0.02);
  const int t = 400;
  const double a = std::sqrt(sched.alpha_bar(t)), b = std::sqrt(1.0 - sched.alpha_bar(t));
  Rng rng(13);
  const Tensor z = rng.normal_tensor({1, 4, 4, 4});
  auto fn = [&](const ad::Var& zv) {
    const ad::Var eps = d.forward(zv, {t}, {ConditioningToken{}});
    const ad::Var z0 = ad::scale(ad::sub(zv, ad::scale(eps, b)), 1.0 / a);
    return ad::mean(ad::mul(ae.decode(z0), ae.decode(z0)));
  };
  CHECK(testing::gradcheck(fn, z, 1e-5).rel_err < 1e-5);
}

TEST_CASE("conditioning token changes the prediction") {
  Denoiser d(4, 3);
  jitter(d.params(), 14, 0.05);
  Rng rng(15);
  const Tensor z = rng.normal_tensor({1, 4, 8, 8});
  const Tensor a = d.predict(z, 100, ConditioningToken{0});
  const Tensor b = d.predict(z, 100, ConditioningToken{1});
  const Tensor n = d.predict(z, 100, ConditioningToken::null());
  double diff = 0.0, diff_null = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += std::abs(a[i] - b[i]);
    diff_null += std::abs(a[i] - n[i]);
  }
  CHECK(diff > 0.0);
  CHECK(diff_null > 0.0);
}

TEST_CASE("perceptual extractor") {
  PerceptualExtractor v(7);
  const Tensor x = random_image(1, 16, 21);
  const auto f1 = v.features(ad::constant(x));
  const auto f2 = v.features(ad::constant(x));
  REQUIRE(f1.size() == 3);
  for (std::size_t i = 0; i < f1.size(); ++i) CHECK(f1[i].value().vec() == f2[i].value().vec());
  CHECK(v.distance(ad::constant(x), ad::constant(x)).value().item() == 0.0);

  Tensor xp = x;
  for (auto& val : xp.vec()) val += 0.1;
  CHECK(v.distance(ad::constant(x), ad::constant(xp)).value().item() > 0.0);

  const auto id = PerceptualExtractor::identity();
  CHECK(id.is_identity());
  CHECK(id.distance(ad::constant(x), ad::constant(xp)).value().item() == doctest::Approx(0.01));
}

TEST_CASE("fresh discriminator outputs exactly one half") {
  Discriminator d(3);
  const Tensor p = d(ad::constant(random_image(3, 16, 30))).value();
  CHECK(p.shape() == Shape{3, 1, 1, 1});
  for (double v : p.vec()) CHECK(v == 0.5);
}

TEST_CASE("discriminator output is clamped away from 0 and 1") {
  Discriminator d(3);
  d.params().find("head.bias").node().value.fill(1e3);
  CHECK(d(ad::constant(random_image(1, 16, 31))).value().item() == 1.0 - Discriminator::kProbFloor);
  d.params().find("head.bias").node().value.fill(-1e3);
  CHECK(d(ad::constant(random_image(1, 16, 31))).value().item() == Discriminator::kProbFloor);
}

TEST_CASE("discriminator learns to separate a fixed real/fake pair") {
  Discriminator d(4, 1e-3);
  const ad::Var real = ad::constant(random_image(1, 16, 40));
  const ad::Var fake = ad::constant(random_image(1, 16, 41));
  for (int i = 0; i < 50; ++i) {
    TrainableScope scope(d.params());
    d.optimizer().zero_grad();
    const ad::Var loss = ad::sub(ad::neg(ad::log(d(real))), ad::log(ad::add_scalar(ad::neg(d(fake)), 1.0)));
    ad::backward(loss);
    d.optimizer().step();
  }
  CHECK(d(real).value().item() > d(fake).value().item());
}

TEST_CASE("parameters are frozen outside a trainable scope") {
  Denoiser d(2, 1);
  Rng rng(3);
  const ad::Var z = ad::leaf(rng.normal_tensor({1, 4, 4, 4}), true);
  ad::backward(ad::sum(d.forward(z, {5}, {ConditioningToken{}})));
  for (const auto& [name, v] : d.params().entries()) CHECK_FALSE(v.has_grad());
  {
    TrainableScope scope(d.params());
    for (const auto& [name, v] : d.params().entries()) CHECK(v.requires_grad());
  }
  for (const auto& [name, v] : d.params().entries()) CHECK_FALSE(v.requires_grad());
}
