#include "ldrps/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "ldrps/errors.hpp"
#include "ldrps/image_io.hpp"

namespace ldrps::sampler {

void RestoreConfig::validate(const NoiseSchedule& sched, int height, int width) const {
  if (sampler.steps < 1 || sampler.steps > sched.steps()) {
    throw ConfigError("sampler.steps must be in [1, " + std::to_string(sched.steps()) + "]");
  }
  if (sampler.recurrence.n < 0) throw ConfigError("sampler.recurrences must be >= 0");
  if (!(sampler.recurrence.gamma > 0.0 && sampler.recurrence.gamma < 1.0)) {
    throw ConfigError("sampler.gamma must be in (0,1)");
  }
  if (!(sampler.d2_lr > 0.0) || !(fpam.lr > 0.0) || !(fpam.d1_lr > 0.0)) {
    throw ConfigError("learning rates must be > 0");
  }
  for (double l : {fpam.lambda1, fpam.lambda2, fpam.lambda3}) {
    if (!(l >= 0.0)) throw ConfigError("fpam lambdas must be non-negative");
  }
  if (!(fpam.guided_lr_scale >= 0.0 && fpam.guided_lr_scale <= 1.0)) {
    throw ConfigError("fpam.guided_lr_scale must be in [0,1]");
  }
  guidance.validate(height, width);
}

void SamplerTrace::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError(path.string(), "cannot write trace");
  out << std::setprecision(10);
  out << "recurrence,step,t,guided,L,Q,S_psi,S_dis,L_dis,g_norm,k,k_free\n";
  auto opt = [&](const std::optional<double>& v) {
    if (v) out << *v;
  };
  for (const auto& r : records) {
    out << r.recurrence << ',' << r.step << ',' << r.t << ',' << (r.guided ? 1 : 0) << ',';
    opt(r.L);
    out << ',';
    opt(r.Q);
    out << ',' << r.S_psi << ',' << r.S_dis << ',';
    opt(r.L_dis);
    out << ',' << r.g_norm << ',' << r.k << ',' << r.k_free << '\n';
  }
  if (!out) throw IoError(path.string(), "write failed");
}

ThresholdResult dynamic_threshold(const Tensor& z0_hat, double s) {
  if (!(s > 0.0 && s <= 1.0)) throw ConfigError("threshold percentile must be in (0,1]");
  ThresholdResult r{z0_hat, {}};
  const std::size_t per = z0_hat.shape().per_sample();
  std::vector<double> mag(per);
  for (int n = 0; n < z0_hat.shape().n; ++n) {
    double* z = r.z.sample(n);
    for (std::size_t i = 0; i < per; ++i) mag[i] = std::abs(z[i]);
    const auto rank = static_cast<std::size_t>(std::ceil(s * static_cast<double>(per)));
    const std::size_t idx = std::clamp<std::size_t>(rank, 1, per) - 1;
    std::nth_element(mag.begin(), mag.begin() + static_cast<std::ptrdiff_t>(idx), mag.end());
    const double k = mag[idx];
    for (std::size_t i = 0; i < per; ++i) z[i] = std::clamp(z[i], -k, k);
    r.k.push_back(k);
  }
  return r;
}

RunState::RunState(const RestoreConfig& cfg, std::uint64_t seed)
    : psi([&] {
        fpam::FpamConfig f = cfg.fpam;
        f.seed = Rng::derive(seed, "fpam");
        return f;
      }()),
      d1(Rng::derive(seed, "d1"), cfg.fpam.d1_lr),
      d2(Rng::derive(seed, "d2"), cfg.sampler.d2_lr),
      guided_rng(seed, "guided"),
      free_rng(seed, "free"),
      recurrence_rng(seed, "recurrence"),
      init_rng(seed, "init") {}

namespace {

double step_variance(const RestoreConfig& cfg, const PosteriorCoefs& pc) {
  switch (cfg.sampler.variance) {
    case Variance::posterior:
      return pc.variance;
    case Variance::delta:
      return pc.variance > 0.0 ? cfg.guidance.delta : 0.0;
    case Variance::zero:
      return 0.0;
  }
  return pc.variance;
}

}  // namespace

StepOutput guided_reverse_step(const Tensor& z_t, const Tensor& z_free, int t, int t_prev, const Tensor& y,
                               models::ConditioningToken c, const models::ModelSet& m, RunState& state,
                               const RestoreConfig& cfg, const NoiseSchedule& sched) {
  require_same_shape(z_t, z_free, "guided_reverse_step tracks");
  if (z_t.shape().n != 1) throw UsageError("guided_reverse_step runs one image at a time");
  const int T = sched.steps();
  StepOutput out;
  TraceRecord& rec = out.record;
  rec.t = t;

  // (a) noise predictions for both tracks in one batch
  const Tensor pair = Tensor::concat_batch(z_t, z_free);
  const Tensor eps = m.denoiser->predict(pair, t, c);
  // (b) z0 estimates, (c) thresholded
  const Tensor z0_pair = predict_z0(pair, eps, t, sched);
  const ThresholdResult th = dynamic_threshold(z0_pair, cfg.guidance.s);
  rec.k = th.k[0];
  rec.k_free = th.k[1];

  // (d) F-PAM and D1 on the concatenated pair
  const double rate = cfg.guidance.guided(t, T) ? cfg.fpam.guided_lr_scale : 1.0;
  state.psi.optimizer().set_lr(cfg.fpam.lr * rate);
  state.d1.optimizer().set_lr(cfg.fpam.d1_lr * rate);
  const fpam::StepResult fs = fpam::train_step(th.z, y, *m.ae, *m.perceptual, state.d1, state.psi);
  rec.S_psi = fs.s_psi;
  rec.S_dis = fs.s_dis;

  // (e) guidance gradient and D2 only in the guided stage
  Tensor g(z_t.shape(), 0.0);
  rec.guided = cfg.guidance.guided(t, T);
  if (rec.guided) {
    const guidance::Gradient gr = guidance::guidance_gradient(z_t, t, y, c, m, state.psi, state.d2, cfg.guidance, sched);
    g = gr.g;
    rec.L = gr.L;
    rec.Q = gr.Q;
    rec.g_norm = gr.norm;
    rec.L_dis = guidance::d2_step(fs.decoded.slice_batch(0, 1), y, fs.decoded, fs.psi, state.d2);
  }

  // (f) sample both tracks with independent streams
  const PosteriorCoefs pc = posterior_coefs(sched, t, t_prev);
  const double sd = std::sqrt(step_variance(cfg, pc));
  const Tensor n_g = state.guided_rng.normal_tensor(z_t.shape());
  const Tensor n_f = state.free_rng.normal_tensor(z_t.shape());
  const double* z0g = th.z.sample(0);
  const double* z0f = th.z.sample(1);
  out.z = Tensor(z_t.shape());
  out.z_free = Tensor(z_t.shape());
  const double delta = cfg.guidance.delta;
  for (std::size_t i = 0; i < z_t.size(); ++i) {
    out.z[i] = pc.coef_z0 * z0g[i] + pc.coef_zt * z_t[i] + delta * g[i] + sd * n_g[i];
    out.z_free[i] = pc.coef_z0 * z0f[i] + pc.coef_zt * z_free[i] + sd * n_f[i];
  }
  if (!out.z.all_finite() || !out.z_free.all_finite()) {
    throw NumericalError("non-finite latent at t=" + std::to_string(t));
  }
  return out;
}

Tensor recurrence_init(const Tensor& x0_prev, double gamma, const NoiseSchedule& sched, const models::Autoencoder& ae,
                       Rng& rng) {
  const int t = std::max(1, static_cast<int>(std::lround(gamma * sched.steps())));
  const Tensor z0 = ae.encode(x0_prev);
  return forward_diffuse(z0, t, rng.normal_tensor(z0.shape()), sched);
}

TimestepPlan pass_plan(int pass, const SamplerConfig& cfg, const NoiseSchedule& sched) {
  if (pass == 0) return ddim_timesteps(sched, cfg.steps);
  const double gamma = cfg.recurrence.gamma;
  const int start = std::max(1, static_cast<int>(std::lround(gamma * sched.steps())));
  const int steps = std::clamp(static_cast<int>(std::lround(gamma * cfg.steps)), 1, start);
  return ddim_timesteps(sched, steps, start);
}

RestoreResult restore(const Tensor& y, models::ConditioningToken c, const models::ModelSet& m,
                      const RestoreConfig& cfg, const NoiseSchedule& sched, std::uint64_t seed,
                      const StepCallback& on_step) {
  const Shape ys = y.shape();
  if (ys.n != 1 || ys.c != 3 || ys.h % models::kDownscale != 0 || ys.w % models::kDownscale != 0) {
    throw UsageError("restore expects one (1,3,H,W) image with H,W divisible by 4, got " + ys.str());
  }
  cfg.validate(sched, ys.h, ys.w);
  const Tensor y_signed = unit_to_signed(y);
  RestoreResult result;
  result.state = std::make_unique<RunState>(cfg, seed);
  RunState& state = *result.state;
  const Shape ls{1, models::kLatentChannels, ys.h / models::kDownscale, ys.w / models::kDownscale};

  Tensor z = state.init_rng.normal_tensor(ls);
  Tensor x0;
  for (int pass = 0; pass <= cfg.sampler.recurrence.n; ++pass) {
    if (pass > 0) z = recurrence_init(x0, cfg.sampler.recurrence.gamma, sched, *m.ae, state.recurrence_rng);
    Tensor z_free = z;
    const TimestepPlan plan = pass_plan(pass, cfg.sampler, sched);
    for (std::size_t i = 0; i < plan.count(); ++i) {
      const int t = plan.timesteps[i];
      const int t_prev = i + 1 < plan.count() ? plan.timesteps[i + 1] : 0;
      StepOutput so;
      try {
        so = guided_reverse_step(z, z_free, t, t_prev, y_signed, c, m, state, cfg, sched);
      } catch (const NumericalError& e) {
        std::string last;
        if (!result.trace.records.empty()) {
          const auto& r = result.trace.records.back();
          last = " (last S_psi=" + std::to_string(r.S_psi) + ", S_dis=" + std::to_string(r.S_dis) +
                 (r.L ? ", L=" + std::to_string(*r.L) : std::string()) + ")";
        }
        throw NumericalError("recurrence " + std::to_string(pass) + ", step " + std::to_string(i) + ": " + e.what() +
                             last);
      }
      z = std::move(so.z);
      z_free = std::move(so.z_free);
      so.record.recurrence = pass;
      so.record.step = static_cast<int>(i);
      if (on_step) on_step(so.record);
      result.trace.records.push_back(so.record);
    }
    x0 = m.ae->decode(z);
    result.trace.intermediates.push_back(signed_to_unit(x0));
  }
  result.image = result.trace.intermediates.back();
  return result;
}

}  // namespace ldrps::sampler
