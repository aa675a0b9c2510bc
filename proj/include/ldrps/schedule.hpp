#pragma once

#include <cstdint>
#include <vector>

#include "ldrps/tensor.hpp"

namespace ldrps {

/// Variance schedule and the closed-form algebra of the forward and reverse
/// processes. Tables are indexed by timestep with entry 0 reserved for t = 0
/// (alpha_bar(0) == 1), so valid timesteps are 0..T.
class NoiseSchedule {
 public:
  /// Linear betas from beta_start to beta_end. Throws ConfigError on invalid bounds.
  NoiseSchedule(int T, double beta_start, double beta_end);

  int steps() const { return T_; }
  double beta_start() const { return beta_start_; }
  double beta_end() const { return beta_end_; }

  double beta(int t) const { return betas_.at(static_cast<std::size_t>(t)); }
  double alpha(int t) const { return alphas_.at(static_cast<std::size_t>(t)); }
  double alpha_bar(int t) const { return alpha_bars_.at(static_cast<std::size_t>(t)); }
  /// sigma_t^2 = (1 - abar_{t-1}) / (1 - abar_t) * beta_t
  double posterior_var(int t) const { return posterior_vars_.at(static_cast<std::size_t>(t)); }

  /// Hash of the beta table; checkpoints record it to detect mismatched schedules.
  std::uint64_t hash() const;

 private:
  int T_;
  double beta_start_, beta_end_;
  std::vector<double> betas_, alphas_, alpha_bars_, posterior_vars_;
};

/// Strictly descending sampling timesteps.
struct TimestepPlan {
  std::vector<int> timesteps;
  std::size_t count() const { return timesteps.size(); }
};

/// `steps` evenly strided timesteps from `start` downward: start - floor(i*start/steps).
TimestepPlan ddim_timesteps(const NoiseSchedule& sched, int steps);
TimestepPlan ddim_timesteps(const NoiseSchedule& sched, int steps, int start);

/// sqrt(abar_t) z0 + sqrt(1 - abar_t) eps
Tensor forward_diffuse(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& sched);

/// (z_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t); t >= 1.
Tensor predict_z0(const Tensor& z_t, const Tensor& eps_hat, int t, const NoiseSchedule& sched);

struct PosteriorCoefs {
  double coef_z0;  // multiplies z0_hat
  double coef_zt;  // multiplies z_t
  double variance;
};

/// Reverse-step coefficients for a jump t -> t_prev (t_prev < t). With
/// t_prev == t - 1 these are exactly the one-step posterior of the chain;
/// for strided plans the step's beta is 1 - abar_t / abar_prev.
PosteriorCoefs posterior_coefs(const NoiseSchedule& sched, int t, int t_prev);

struct PosteriorMeanVar {
  Tensor mean;
  double variance;
};

PosteriorMeanVar posterior_mean_var(const Tensor& z_t, const Tensor& z0_hat, int t,
                                    const NoiseSchedule& sched);
PosteriorMeanVar posterior_mean_var(const Tensor& z_t, const Tensor& z0_hat, int t, int t_prev,
                                    const NoiseSchedule& sched);

}  // namespace ldrps
