#include "ldrps/schedule.hpp"

#include <cmath>
#include <string>

#include "ldrps/errors.hpp"
#include "ldrps/rng.hpp"

namespace ldrps {

NoiseSchedule::NoiseSchedule(int T, double beta_start, double beta_end)
    : T_(T), beta_start_(beta_start), beta_end_(beta_end) {
  if (T < 1) throw ConfigError("schedule.T must be >= 1, got " + std::to_string(T));
  if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end) {
    throw ConfigError("schedule betas must satisfy 0 < beta_start <= beta_end < 1");
  }
  const auto n = static_cast<std::size_t>(T) + 1;
  betas_.assign(n, 0.0);
  alphas_.assign(n, 1.0);
  alpha_bars_.assign(n, 1.0);
  posterior_vars_.assign(n, 0.0);
  for (int t = 1; t <= T; ++t) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(T - 1);
    const auto i = static_cast<std::size_t>(t);
    betas_[i] = beta_start + frac * (beta_end - beta_start);
    alphas_[i] = 1.0 - betas_[i];
    alpha_bars_[i] = alpha_bars_[i - 1] * alphas_[i];
    posterior_vars_[i] = (1.0 - alpha_bars_[i - 1]) / (1.0 - alpha_bars_[i]) * betas_[i];
  }
}

std::uint64_t NoiseSchedule::hash() const {
  std::uint64_t h = fnv1a(&T_, sizeof T_);
  for (std::size_t i = 1; i < betas_.size(); ++i) {
    const auto f = static_cast<float>(betas_[i]);
    h = fnv1a(&f, sizeof f, h);
  }
  return h;
}

TimestepPlan ddim_timesteps(const NoiseSchedule& sched, int steps) {
  return ddim_timesteps(sched, steps, sched.steps());
}

TimestepPlan ddim_timesteps(const NoiseSchedule& sched, int steps, int start) {
  if (start < 1 || start > sched.steps()) {
    throw ConfigError("plan start " + std::to_string(start) + " outside 1.." + std::to_string(sched.steps()));
  }
  if (steps < 1 || steps > start) {
    throw ConfigError("sampling steps must be in 1.." + std::to_string(start) + ", got " +
                      std::to_string(steps));
  }
  TimestepPlan plan;
  plan.timesteps.reserve(static_cast<std::size_t>(steps));
  for (long i = 0; i < steps; ++i) {
    plan.timesteps.push_back(start - static_cast<int>((i * start) / steps));
  }
  return plan;
}

namespace {

void check_t(int t, const NoiseSchedule& sched, int lo) {
  if (t < lo || t > sched.steps()) {
    throw UsageError("timestep " + std::to_string(t) + " outside " + std::to_string(lo) + ".." +
                     std::to_string(sched.steps()));
  }
}

}  // namespace

Tensor forward_diffuse(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& sched) {
  require_same_shape(z0, eps, "forward_diffuse");
  check_t(t, sched, 0);
  const double a = std::sqrt(sched.alpha_bar(t));
  const double b = std::sqrt(1.0 - sched.alpha_bar(t));
  Tensor out(z0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * z0[i] + b * eps[i];
  return out;
}

Tensor predict_z0(const Tensor& z_t, const Tensor& eps_hat, int t, const NoiseSchedule& sched) {
  require_same_shape(z_t, eps_hat, "predict_z0");
  if (t == 0) throw UsageError("predict_z0 at t = 0: z_0 is already known");
  check_t(t, sched, 1);
  const double inv = 1.0 / std::sqrt(sched.alpha_bar(t));
  const double b = std::sqrt(1.0 - sched.alpha_bar(t));
  Tensor out(z_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (z_t[i] - b * eps_hat[i]) * inv;
  return out;
}

PosteriorCoefs posterior_coefs(const NoiseSchedule& sched, int t, int t_prev) {
  check_t(t, sched, 1);
  if (t_prev < 0 || t_prev >= t) throw UsageError("posterior_coefs requires 0 <= t_prev < t");
  const double abar_t = sched.alpha_bar(t);
  const double abar_prev = sched.alpha_bar(t_prev);
  double beta, alpha;
  if (t_prev == t - 1) {
    beta = sched.beta(t);
    alpha = sched.alpha(t);
  } else {
    alpha = abar_t / abar_prev;
    beta = 1.0 - alpha;
  }
  const double denom = 1.0 - abar_t;
  PosteriorCoefs c;
  c.coef_z0 = std::sqrt(abar_prev) * beta / denom;
  c.coef_zt = std::sqrt(alpha) * (1.0 - abar_prev) / denom;
  c.variance = t_prev == t - 1 ? sched.posterior_var(t) : (1.0 - abar_prev) / denom * beta;
  return c;
}

PosteriorMeanVar posterior_mean_var(const Tensor& z_t, const Tensor& z0_hat, int t,
                                    const NoiseSchedule& sched) {
  return posterior_mean_var(z_t, z0_hat, t, t - 1, sched);
}

PosteriorMeanVar posterior_mean_var(const Tensor& z_t, const Tensor& z0_hat, int t, int t_prev,
                                    const NoiseSchedule& sched) {
  require_same_shape(z_t, z0_hat, "posterior_mean_var");
  const PosteriorCoefs c = posterior_coefs(sched, t, t_prev);
  Tensor mean(z_t.shape());
  for (std::size_t i = 0; i < mean.size(); ++i) mean[i] = c.coef_z0 * z0_hat[i] + c.coef_zt * z_t[i];
  return {std::move(mean), c.variance};
}

}  // namespace ldrps
