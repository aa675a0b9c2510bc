#include "ldrps/fpam.hpp"

#include <cmath>

#include "ldrps/checkpoint.hpp"
#include "ldrps/errors.hpp"

namespace ldrps::fpam {

using ad::Var;

namespace {

constexpr int kHidden = 16;

void check_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericalError(std::string(what) + " is not finite");
}

Tensor repeat_batch(const Tensor& y, int n) {
  const Shape s = y.shape();
  if (s.n == n) return y;
  if (s.n != 1) throw UsageError("cannot repeat batch " + s.str() + " to " + std::to_string(n));
  Tensor out({n, s.c, s.h, s.w});
  for (int i = 0; i < n; ++i) std::copy(y.vec().begin(), y.vec().end(), out.sample(i));
  return out;
}

}  // namespace

Fpam::Fpam(const FpamConfig& cfg) : cfg_(cfg) {
  Rng rng(cfg.seed, "fpam");
  a0_ = nn::Conv2d(params_, "h1.0", 3, kHidden, 3, 1, rng);
  a1_ = nn::Conv2d(params_, "h1.1", kHidden, kHidden, 3, 1, rng);
  a2_ = nn::Conv2d(params_, "h1.2", kHidden, 3, 3, 1, rng, 0.0);
  b0_ = nn::Conv2d(params_, "h2.0", 3, kHidden, 3, 1, rng);
  b1_ = nn::Conv2d(params_, "h2.1", kHidden, kHidden, 3, 1, rng);
  b2_ = nn::Conv2d(params_, "h2.2", kHidden, 3, 3, 1, rng, 0.0);
  p_ = params_.add("p", Tensor({1, 3, 1, 1}, 0.0));
  adam_ = nn::Adam(params_.vars(), cfg.lr);
}

Var Fpam::h1(const Var& u) const { return ad::add(u, a2_(ad::silu(a1_(ad::silu(a0_(u)))))); }

Var Fpam::apply_image(const Var& u) const {
  if (u.shape().c != 3) throw UsageError("fpam expects 3-channel images, got " + u.shape().str());
  const Var g = h1(u);
  const Var h2 = ad::add(g, b2_(ad::silu(b1_(ad::silu(b0_(g))))));
  return ad::add(h2, ad::channel_scale(g, p_));
}

Var fpam_loss(const Var& decoded, const Var& psi, const models::PerceptualExtractor& v,
              const models::Discriminator& d1, const FpamConfig& cfg) {
  const Var pixel = ad::mse(decoded, psi);
  const Var percep = v.distance(decoded, psi);
  const Var adv = ad::mean(ad::log(ad::add_scalar(ad::neg(d1(psi)), 1.0)));
  return ad::add(ad::add(ad::scale(pixel, cfg.lambda1), ad::scale(percep, cfg.lambda2)), ad::scale(adv, cfg.lambda3));
}

Var d1_loss(const Tensor& y, const Tensor& psi, const models::Discriminator& d1) {
  const Var real = d1(ad::constant(repeat_batch(y, psi.shape().n)));
  const Var fake = d1(ad::constant(psi));
  return ad::add(ad::neg(ad::mean(ad::log(real))), ad::neg(ad::mean(ad::log(ad::add_scalar(ad::neg(fake), 1.0)))));
}

StepResult train_step(const Tensor& z_pair, const Tensor& y, const models::Autoencoder& ae,
                      const models::PerceptualExtractor& v, models::Discriminator& d1, Fpam& s) {
  StepResult r;
  r.decoded = ae.decode(z_pair);
  {
    models::TrainableScope scope(s.params());
    const Var f = ad::constant(r.decoded);
    const Var psi = s.apply_image(f);
    const Var loss = fpam_loss(f, psi, v, d1, s.config());
    r.s_psi = loss.value().item();
    check_finite(r.s_psi, "F-PAM loss");
    r.psi = psi.value();
    s.optimizer().zero_grad();
    ad::backward(loss);
    s.optimizer().step();
  }
  {
    models::TrainableScope scope(d1.params());
    const Var loss = d1_loss(y, r.psi, d1);
    r.s_dis = loss.value().item();
    check_finite(r.s_dis, "D1 loss");
    d1.optimizer().zero_grad();
    ad::backward(loss);
    d1.optimizer().step();
  }
  return r;
}

void save_fpam(const std::filesystem::path& path, const Fpam& s) {
  const auto& c = s.config();
  save_checkpoint(path, "fpam",
                  {{"seed", c.seed}, {"lambda1", c.lambda1}, {"lambda2", c.lambda2}, {"lambda3", c.lambda3}, {"lr", c.lr}},
                  s.params());
}

}  // namespace ldrps::fpam
