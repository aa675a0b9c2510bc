#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ldrps/dataset.hpp"
#include "ldrps/models.hpp"
#include "ldrps/schedule.hpp"

namespace ldrps::models {

/// One entry per optimiser step, plus per-epoch means where epochs exist.
struct TrainLog {
  std::vector<double> step_loss;
  std::vector<double> epoch_loss;
};

using ProgressFn = std::function<void(const std::string&)>;

struct AutoencoderTrainConfig {
  int epochs = 6;
  int batch = 16;
  double lr = 2e-3;
  double latent_l2 = 1e-4;  // pins the latent scale the decoder sees
  double latent_noise = 0.1;  // decoder input noise, relative to the batch latent std
  std::uint64_t seed = 0;
};

struct DenoiserTrainConfig {
  int steps = 4000;
  int batch = 32;
  double lr = 1e-3;
  double ema_decay = 0.999;
  double cond_dropout = 0.1;  // probability of replacing the label by the null token
  std::uint64_t seed = 0;
};

/// Throws TrainingError if the loss becomes non-finite. The returned model has
/// float32-rounded parameters and a calibrated latent_scale.
Autoencoder train_autoencoder(const Dataset& data, const AutoencoderTrainConfig& cfg, TrainLog* log = nullptr,
                              const ProgressFn& progress = {});

/// latent_scale = 1 / std of the encoder output over the dataset.
void calibrate_latent_scale(Autoencoder& ae, const Dataset& data);

/// Latents of every dataset image, (N,4,H/4,W/4).
Tensor encode_dataset(const Autoencoder& ae, const Dataset& data);

/// Noise-prediction training on encoded latents; returns the EMA weights.
Denoiser train_denoiser(const Dataset& data, const Autoencoder& ae, const NoiseSchedule& sched,
                        const DenoiserTrainConfig& cfg, TrainLog* log = nullptr, const ProgressFn& progress = {});

void save_autoencoder(const std::filesystem::path& path, const Autoencoder& ae, std::uint64_t seed);
Autoencoder load_autoencoder(const std::filesystem::path& path);

void save_denoiser(const std::filesystem::path& path, const Denoiser& d, const NoiseSchedule& sched,
                   std::uint64_t seed);
/// Throws ConfigError when the checkpoint was trained under a different schedule.
Denoiser load_denoiser(const std::filesystem::path& path, const NoiseSchedule& sched);

}  // namespace ldrps::models
