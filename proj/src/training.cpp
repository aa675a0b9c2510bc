#include "ldrps/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ldrps/checkpoint.hpp"
#include "ldrps/errors.hpp"

namespace ldrps::models {
namespace {

void check_finite(double loss, const char* what, long step) {
  if (!std::isfinite(loss)) {
    throw TrainingError(std::string(what) + " training diverged at step " + std::to_string(step));
  }
}

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng.engine());
  return idx;
}

double sq_mean(const Tensor& t) {
  double s = 0.0;
  for (double v : t.vec()) s += v * v;
  return s / static_cast<double>(t.size());
}

double as_float(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

Autoencoder train_autoencoder(const Dataset& data, const AutoencoderTrainConfig& cfg, TrainLog* log,
                              const ProgressFn& progress) {
  if (data.size() == 0) throw ConfigError("autoencoder training needs a non-empty dataset");
  if (cfg.epochs < 1 || cfg.batch < 1) throw ConfigError("autoencoder epochs and batch must be >= 1");
  Autoencoder ae(cfg.seed);
  Rng rng(cfg.seed, "ae-shuffle");
  TrainableScope scope(ae.params());
  nn::Adam opt(ae.params().vars(), cfg.lr);
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled(data.size(), rng);
    double total = 0.0;
    int batches = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch)) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(b),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), b + cfg.batch)));
      const ad::Var x = ad::constant(data.batch_signed(idx));
      const ad::Var z = ae.encode(x);
      ad::Var zin = z;
      if (cfg.latent_noise > 0.0) {
        // smooth decoder around the codes so small latent moves stay on-manifold
        Tensor n = rng.normal_tensor(z.shape());
        const double sd = cfg.latent_noise * std::sqrt(std::max(1e-12, sq_mean(z.value())));
        for (auto& v : n.vec()) v *= sd;
        zin = ad::add(z, ad::constant(std::move(n)));
      }
      ad::Var loss = ad::mse(ae.decode(zin), x);
      if (cfg.latent_l2 > 0.0) loss = ad::add(loss, ad::scale(ad::mean(ad::mul(z, z)), cfg.latent_l2));
      const double v = loss.value().item();
      check_finite(v, "autoencoder", step);
      opt.zero_grad();
      ad::backward(loss);
      opt.step();
      ++step;
      total += v;
      ++batches;
      if (log) log->step_loss.push_back(v);
    }
    const double mean = total / batches;
    if (log) log->epoch_loss.push_back(mean);
    if (progress) progress("autoencoder epoch " + std::to_string(epoch + 1) + " loss " + std::to_string(mean));
  }
  ae.params().round_to_float();
  calibrate_latent_scale(ae, data);
  return ae;
}

Tensor encode_dataset(const Autoencoder& ae, const Dataset& data) {
  const Shape img = data.items.at(0).image.shape();
  Tensor out({static_cast<int>(data.size()), kLatentChannels, img.h / kDownscale, img.w / kDownscale});
  const std::size_t ps = out.shape().per_sample();
  constexpr std::size_t chunk = 64;
  for (std::size_t b = 0; b < data.size(); b += chunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = b; i < std::min(data.size(), b + chunk); ++i) idx.push_back(i);
    const Tensor z = ae.encode(data.batch_signed(idx));
    std::copy(z.vec().begin(), z.vec().end(), out.vec().begin() + static_cast<std::ptrdiff_t>(b * ps));
  }
  return out;
}

void calibrate_latent_scale(Autoencoder& ae, const Dataset& data) {
  ae.latent_scale = 1.0;
  const Tensor z = encode_dataset(ae, data);
  double sum = 0.0, sq = 0.0;
  for (double v : z.vec()) {
    sum += v;
    sq += v * v;
  }
  const double n = static_cast<double>(z.size());
  const double var = sq / n - (sum / n) * (sum / n);
  if (!(var > 0.0) || !std::isfinite(var)) throw TrainingError("degenerate latent variance");
  ae.latent_scale = as_float(1.0 / std::sqrt(var));
}

Denoiser train_denoiser(const Dataset& data, const Autoencoder& ae, const NoiseSchedule& sched,
                        const DenoiserTrainConfig& cfg, TrainLog* log, const ProgressFn& progress) {
  if (cfg.steps < 1 || cfg.batch < 1) throw ConfigError("denoiser steps and batch must be >= 1");
  if (cfg.cond_dropout < 0.0 || cfg.cond_dropout > 1.0) throw ConfigError("cond_dropout must be in [0,1]");
  const Tensor latents = encode_dataset(ae, data);
  const Shape ls = latents.shape();
  const std::size_t ps = ls.per_sample();

  Denoiser net(std::max(1, data.classes), cfg.seed);
  net.max_timestep = sched.steps();
  Rng rng(cfg.seed, "denoiser-batches");
  TrainableScope scope(net.params());
  nn::Adam opt(net.params().vars(), cfg.lr);
  nn::Ema ema(net.params(), cfg.ema_decay);

  const int report_every = std::max(1, cfg.steps / 10);
  double running = 0.0;
  for (int step = 0; step < cfg.steps; ++step) {
    Tensor zt({cfg.batch, ls.c, ls.h, ls.w});
    Tensor eps = rng.normal_tensor(zt.shape());
    std::vector<int> ts;
    std::vector<ConditioningToken> tokens;
    for (int b = 0; b < cfg.batch; ++b) {
      const int i = rng.index(static_cast<int>(data.size()));
      const int t = 1 + rng.index(sched.steps());
      const double a = std::sqrt(sched.alpha_bar(t)), s = std::sqrt(1.0 - sched.alpha_bar(t));
      const double* z0 = latents.sample(i);
      const double* e = eps.sample(b);
      double* dst = zt.sample(b);
      for (std::size_t k = 0; k < ps; ++k) dst[k] = a * z0[k] + s * e[k];
      ts.push_back(t);
      const bool drop = rng.bernoulli(cfg.cond_dropout);
      tokens.push_back(drop ? ConditioningToken::null() : ConditioningToken{data.items[static_cast<std::size_t>(i)].label});
    }
    const ad::Var loss = ad::mse(net.forward(ad::constant(zt), ts, tokens), ad::constant(std::move(eps)));
    const double v = loss.value().item();
    check_finite(v, "denoiser", step);
    opt.zero_grad();
    ad::backward(loss);
    opt.step();
    ema.update(net.params());
    if (log) log->step_loss.push_back(v);
    running += v;
    if (progress && (step + 1) % report_every == 0) {
      progress("denoiser step " + std::to_string(step + 1) + " loss " + std::to_string(running / report_every));
      running = 0.0;
    }
  }
  ema.copy_to(net.params());
  net.params().round_to_float();
  return net;
}

void save_autoencoder(const std::filesystem::path& path, const Autoencoder& ae, std::uint64_t seed) {
  save_checkpoint(path, "autoencoder", {{"seed", seed}, {"latent_scale", ae.latent_scale}}, ae.params());
}

Autoencoder load_autoencoder(const std::filesystem::path& path) {
  const auto meta = read_checkpoint_meta(path);
  Autoencoder ae(meta.value("seed", std::uint64_t{0}));
  load_checkpoint(path, "autoencoder", ae.params());
  ae.latent_scale = meta.value("latent_scale", 1.0);
  return ae;
}

void save_denoiser(const std::filesystem::path& path, const Denoiser& d, const NoiseSchedule& sched,
                   std::uint64_t seed) {
  save_checkpoint(path, "denoiser",
                  {{"seed", seed},
                   {"classes", d.classes()},
                   {"schedule_hash", hex64(sched.hash())},
                   {"schedule", {{"T", sched.steps()}, {"beta_start", sched.beta_start()}, {"beta_end", sched.beta_end()}}}},
                  d.params());
}

Denoiser load_denoiser(const std::filesystem::path& path, const NoiseSchedule& sched) {
  const auto meta = read_checkpoint_meta(path);
  const std::string want = hex64(sched.hash());
  const std::string got = meta.value("schedule_hash", std::string());
  if (got != want) {
    throw ConfigError(path.string() + ": checkpoint schedule hash " + got + " does not match configured schedule " + want);
  }
  Denoiser d(meta.value("classes", 1), meta.value("seed", std::uint64_t{0}));
  load_checkpoint(path, "denoiser", d.params());
  d.max_timestep = sched.steps();
  return d;
}

}  // namespace ldrps::models
