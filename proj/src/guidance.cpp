#include "ldrps/guidance.hpp"

#include <cmath>
#include <string>

#include "ldrps/errors.hpp"

namespace ldrps::guidance {

using ad::Var;

namespace {

int grid_side(int K) {
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(K))));
  return side * side == K ? side : -1;
}

Var log1m(const Var& p) { return ad::log(ad::add_scalar(ad::neg(p), 1.0)); }

// Fixed 1x1 projection onto deviations from the channel mean.
Tensor centering_weights(int channels) {
  Tensor w({channels, channels, 1, 1});
  for (int o = 0; o < channels; ++o)
    for (int i = 0; i < channels; ++i) w.at(o, i, 0, 0) = (o == i ? 1.0 : 0.0) - 1.0 / channels;
  return w;
}

Tensor residual(const Tensor& a, const Tensor& b) {
  Tensor r = a;
  for (std::size_t i = 0; i < r.size(); ++i) r[i] -= b[i % b.size()];
  return r;
}

}  // namespace

void GuidanceConfig::validate(int height, int width) const {
  for (double w : {w1, w2, w3, w4, w5}) {
    if (!(w >= 0.0)) throw ConfigError("guidance weights must be non-negative");
  }
  if (!(delta > 0.0)) throw ConfigError("guidance.delta must be > 0");
  if (!(quality_frac >= 0.0 && quality_frac < stage1_frac && stage1_frac <= 1.0)) {
    throw ConfigError("guidance stages need 0 <= quality_frac < stage1_frac <= 1");
  }
  if (!(e >= 0.0 && e <= 1.0)) throw ConfigError("guidance.e must be in [0,1]");
  if (!(s > 0.0 && s <= 1.0)) throw ConfigError("guidance.s must be in (0,1]");
  if (!(clip_factor > 0.0)) throw ConfigError("guidance.clip_factor must be > 0");
  const int side = K >= 1 ? grid_side(K) : -1;
  if (side < 0 || height % side != 0 || width % side != 0 || height / side != width / side) {
    throw ConfigError("guidance.K = " + std::to_string(K) + " does not tile a " + std::to_string(height) + "x" +
                      std::to_string(width) + " image into equal square patches");
  }
}

Var distance_loss(const Var& psi_z0, const Var& f_z0, const Tensor& y, const models::PerceptualExtractor& v,
                  const models::Discriminator& d2, const GuidanceConfig& cfg) {
  require_same_shape(psi_z0.value(), y, "distance_loss psi/y");
  require_same_shape(f_z0.value(), y, "distance_loss f/y");
  const Var yv = ad::constant(y);
  Var total = ad::scale(ad::mse(yv, psi_z0), cfg.w1);
  if (cfg.w2 != 0.0) total = ad::add(total, ad::scale(v.distance(yv, psi_z0), cfg.w2));
  const Var adv = ad::mean(log1m(d2(ad::sub(f_z0, yv))));
  return ad::add(total, ad::scale(adv, cfg.w3));
}

Var quality_loss(const Var& image, const GuidanceConfig& cfg) {
  const Shape s = image.shape();
  if (s.c != 3) throw UsageError("quality_loss expects RGB, got " + s.str());
  const int side = grid_side(cfg.K);
  if (side < 0 || s.h % side != 0 || s.w % side != 0 || s.h / side != s.w / side) {
    throw ConfigError("guidance.K = " + std::to_string(cfg.K) + " does not tile " + s.str());
  }
  const Var unit = ad::add_scalar(ad::scale(image, 0.5), 0.5);
  const Var patches = ad::avg_pool(ad::channel_mean(unit), s.h / side);
  const Var exposure = ad::mean(ad::abs(ad::add_scalar(patches, -cfg.e)));
  // sum_{p<q} (V_p - V_q)^2 = C * sum_p (V_p - mean)^2 for C channels
  const Var dev = ad::conv2d(ad::spatial_mean(unit), ad::constant(centering_weights(3)), Var(), 1, 0);
  const Var chroma = ad::scale(ad::mean(ad::mul(dev, dev)), 9.0);
  return ad::add(ad::scale(exposure, cfg.w4), ad::scale(chroma, cfg.w5));
}

double d2_step(const Tensor& f_z0, const Tensor& y, const Tensor& f_pair, const Tensor& psi_pair,
               models::Discriminator& d2) {
  require_same_shape(f_z0, y, "d2_step f/y");
  require_same_shape(f_pair, psi_pair, "d2_step pair");
  models::TrainableScope scope(d2.params());
  const Var guided = d2(ad::constant(residual(f_z0, y)));
  const Var reference = d2(ad::constant(residual(f_pair, psi_pair)));
  const Var loss = ad::add(ad::neg(ad::mean(log1m(guided))), ad::neg(ad::mean(ad::log(reference))));
  const double v = loss.value().item();
  if (!std::isfinite(v)) throw NumericalError("D2 loss is not finite");
  d2.optimizer().zero_grad();
  ad::backward(loss);
  d2.optimizer().step();
  return v;
}

Objective objective(const Var& z_t, int t, const Tensor& y, models::ConditioningToken c, const models::ModelSet& m,
                    const fpam::Fpam& psi, const models::Discriminator& d2, const GuidanceConfig& cfg,
                    const NoiseSchedule& sched) {
  if (t < 1 || t > sched.steps()) throw UsageError("guidance: timestep " + std::to_string(t) + " out of range");
  const int n = z_t.shape().n;
  const Var eps_in = cfg.detach_eps ? ad::detach(z_t) : z_t;
  const Var eps = m.denoiser->forward(eps_in, std::vector<int>(static_cast<std::size_t>(n), t),
                                      std::vector<models::ConditioningToken>(static_cast<std::size_t>(n), c));
  const double ab = sched.alpha_bar(t);
  const Var z0 = ad::scale(ad::sub(z_t, ad::scale(eps, std::sqrt(1.0 - ab))), 1.0 / std::sqrt(ab));
  const Var f = m.ae->decode(z0);
  const Var p = psi.apply_image(f);
  Objective o;
  o.total = distance_loss(p, f, y, *m.perceptual, d2, cfg);
  o.L = o.total.value().item();
  if (cfg.quality_active(t, sched.steps())) {
    const Var q = quality_loss(f, cfg);
    o.Q = q.value().item();
    o.total = ad::add(o.total, q);
  }
  return o;
}

Gradient guidance_gradient(const Tensor& z_t, int t, const Tensor& y, models::ConditioningToken c,
                           const models::ModelSet& m, const fpam::Fpam& psi, const models::Discriminator& d2,
                           const GuidanceConfig& cfg, const NoiseSchedule& sched) {
  Gradient out;
  out.g = Tensor(z_t.shape(), 0.0);
  if (!cfg.guided(t, sched.steps())) return out;
  out.active = true;
  const bool all_zero = cfg.w1 == 0.0 && cfg.w2 == 0.0 && cfg.w3 == 0.0 &&
                        (!cfg.quality_active(t, sched.steps()) || (cfg.w4 == 0.0 && cfg.w5 == 0.0));
  const Var z = ad::leaf(z_t);
  const Objective o = objective(z, t, y, c, m, psi, d2, cfg, sched);
  out.L = o.L;
  out.Q = o.Q;
  if (!std::isfinite(o.total.value().item())) {
    throw NumericalError("guidance objective not finite at t=" + std::to_string(t) + " (L=" + std::to_string(o.L) + ")");
  }
  if (all_zero) return out;
  ad::backward(o.total);
  if (!z.has_grad()) return out;
  double sq = 0.0, zsq = 0.0;
  for (std::size_t i = 0; i < out.g.size(); ++i) {
    out.g[i] = -z.grad()[i];
    sq += out.g[i] * out.g[i];
    zsq += z_t[i] * z_t[i];
  }
  out.norm = std::sqrt(sq);
  if (!std::isfinite(out.norm)) throw NumericalError("guidance gradient not finite at t=" + std::to_string(t));
  if (cfg.clip) {
    const double cap = cfg.clip_factor * std::sqrt(zsq);
    if (out.norm > cap && out.norm > 0.0) {
      const double k = cap / out.norm;
      for (auto& v : out.g.vec()) v *= k;
      out.norm = cap;
    }
  }
  return out;
}

}  // namespace ldrps::guidance
