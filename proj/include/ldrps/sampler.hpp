#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "ldrps/fpam.hpp"
#include "ldrps/guidance.hpp"
#include "ldrps/models.hpp"
#include "ldrps/rng.hpp"
#include "ldrps/schedule.hpp"

namespace ldrps::sampler {

/// Sampling variance of the reverse Gaussian. `zero` makes every step deterministic.
enum class Variance { posterior, delta, zero };

struct RecurrenceConfig {
  int n = 0;
  double gamma = 0.5;
};

struct SamplerConfig {
  int steps = 450;
  Variance variance = Variance::posterior;
  RecurrenceConfig recurrence;
  double d2_lr = 1e-4;
};

struct RestoreConfig {
  SamplerConfig sampler;
  guidance::GuidanceConfig guidance;
  fpam::FpamConfig fpam;

  /// Throws ConfigError.
  void validate(const NoiseSchedule& sched, int height, int width) const;
};

struct TraceRecord {
  int recurrence = 0;
  int step = 0;
  int t = 0;
  bool guided = false;
  std::optional<double> L, Q, L_dis;
  double S_psi = 0.0, S_dis = 0.0;
  double g_norm = 0.0;
  double k = 0.0, k_free = 0.0;
};

struct SamplerTrace {
  std::vector<TraceRecord> records;
  std::vector<Tensor> intermediates;  // x_0 of every pass, [0,1]

  void write_csv(const std::filesystem::path& path) const;
};

struct ThresholdResult {
  Tensor z;
  std::vector<double> k;  // per batch item
};

/// Clamp each batch item to [-k, k], k = nearest-rank s-percentile of |z| (index ceil(s n)).
ThresholdResult dynamic_threshold(const Tensor& z0_hat, double s);

/// Mutable state owned by one restoration.
struct RunState {
  fpam::Fpam psi;
  models::Discriminator d1, d2;
  Rng guided_rng, free_rng, recurrence_rng, init_rng;

  RunState(const RestoreConfig& cfg, std::uint64_t seed);
};

struct StepOutput {
  Tensor z, z_free;
  TraceRecord record;
};

/// One dual-track reverse step t -> t_prev. y is the degraded image in [-1,1].
StepOutput guided_reverse_step(const Tensor& z_t, const Tensor& z_free, int t, int t_prev, const Tensor& y,
                               models::ConditioningToken c, const models::ModelSet& m, RunState& state,
                               const RestoreConfig& cfg, const NoiseSchedule& sched);

/// Encode x0_prev ([-1,1]) and diffuse it to round(gamma T) (at least 1) with fresh noise.
Tensor recurrence_init(const Tensor& x0_prev, double gamma, const NoiseSchedule& sched,
                       const models::Autoencoder& ae, Rng& rng);

/// Timestep plan of pass i: the full plan for i = 0, else a plan starting at
/// round(gamma T) with round(gamma steps) entries.
TimestepPlan pass_plan(int pass, const SamplerConfig& cfg, const NoiseSchedule& sched);

struct RestoreResult {
  Tensor image;  // (1,3,H,W) in [0,1]
  SamplerTrace trace;
  std::unique_ptr<RunState> state;  // final F-PAM and discriminators
};

using StepCallback = std::function<void(const TraceRecord&)>;

/// Recurrent guided sampling (n + 1 passes) for a degraded image y in [0,1].
RestoreResult restore(const Tensor& y, models::ConditioningToken c, const models::ModelSet& m,
                      const RestoreConfig& cfg, const NoiseSchedule& sched, std::uint64_t seed,
                      const StepCallback& on_step = {});

}  // namespace ldrps::sampler
