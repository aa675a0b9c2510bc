#pragma once

#include <optional>

#include "ldrps/fpam.hpp"
#include "ldrps/models.hpp"
#include "ldrps/schedule.hpp"

namespace ldrps::guidance {

struct GuidanceConfig {
  double w1 = 1.0;   // pixel distance to y
  double w2 = 0.1;   // perceptual distance to y
  double w3 = 0.01;  // D2 adversarial term
  double w4 = 0.1;   // patch exposure
  double w5 = 0.1;   // gray-world chroma
  double delta = 1.0;
  double stage1_frac = 0.7;    // g == 0 for t > stage1_frac * T
  double quality_frac = 0.15;  // Q active for t < quality_frac * T
  double e = 0.5;
  int K = 16;  // square grid of equal patches
  double s = 0.995;
  bool detach_eps = false;
  bool clip = false;  // cap |g| at clip_factor * |z_t|
  double clip_factor = 10.0;

  /// Throws ConfigError; image dims are needed to check that K tiles them.
  void validate(int height, int width) const;
  bool guided(int t, int T) const { return t <= stage1_frac * T; }
  bool quality_active(int t, int T) const { return t < quality_frac * T; }
};

/// w1 mse(y, psi) + w2 Vdist(y, psi) + w3 mean log(1 - D2(f - y)). Images in [-1,1].
ad::Var distance_loss(const ad::Var& psi_z0, const ad::Var& f_z0, const Tensor& y,
                      const models::PerceptualExtractor& v, const models::Discriminator& d2,
                      const GuidanceConfig& cfg);

/// Exposure and chroma prior on an image in [-1,1], evaluated in [0,1]:
/// w4 mean_k |patch luminance_k - e| + w5 sum_{p<q} (V_p - V_q)^2, batch-averaged.
ad::Var quality_loss(const ad::Var& image, const GuidanceConfig& cfg);

/// One D2 update on -log(1 - D2(f - y)) - log D2(f_pair - psi_pair); returns the loss.
double d2_step(const Tensor& f_z0, const Tensor& y, const Tensor& f_pair, const Tensor& psi_pair,
               models::Discriminator& d2);

struct Objective {
  ad::Var total;  // L (+ Q when active)
  double L = 0.0;
  std::optional<double> Q;
};

/// L + Q as a differentiable function of z_t through z0_hat, f and psi.
Objective objective(const ad::Var& z_t, int t, const Tensor& y, models::ConditioningToken c,
                    const models::ModelSet& m, const fpam::Fpam& psi, const models::Discriminator& d2,
                    const GuidanceConfig& cfg, const NoiseSchedule& sched);

struct Gradient {
  Tensor g;  // -grad_{z_t}(L + Q); exactly zero outside the guided stage
  bool active = false;
  double L = 0.0;
  std::optional<double> Q;
  double norm = 0.0;
};

Gradient guidance_gradient(const Tensor& z_t, int t, const Tensor& y, models::ConditioningToken c,
                           const models::ModelSet& m, const fpam::Fpam& psi, const models::Discriminator& d2,
                           const GuidanceConfig& cfg, const NoiseSchedule& sched);

}  // namespace ldrps::guidance
