#pragma once

// Desk-scale networks standing in for the pretrained latent-diffusion stack.
// Every model owns its ParamStore; parameters are frozen leaves unless a
// training routine flips them trainable, so inference builds graphs only
// through inputs that require gradients. Models share parameter nodes on copy
// and are therefore move-only.

#include <cstdint>
#include <vector>

#include "ldrps/autodiff.hpp"
#include "ldrps/nn.hpp"

namespace ldrps::models {

inline constexpr int kLatentChannels = 4;
inline constexpr int kDownscale = 4;

/// Class label or the null (unconditional) token.
struct ConditioningToken {
  int id = -1;
  static ConditioningToken null() { return {}; }
  bool is_null() const { return id < 0; }
};

struct MoveOnly {
  MoveOnly() = default;
  MoveOnly(const MoveOnly&) = delete;
  MoveOnly& operator=(const MoveOnly&) = delete;
  MoveOnly(MoveOnly&&) = default;
  MoveOnly& operator=(MoveOnly&&) = default;
};

/// Conv autoencoder: (N,3,H,W) in [-1,1] <-> (N,4,H/4,W/4).
/// Latents are multiplied by `latent_scale` after encoding and divided before
/// decoding so the diffusion prior sees roughly unit-variance features.
class Autoencoder : MoveOnly {
 public:
  explicit Autoencoder(std::uint64_t seed);

  ad::Var encode(const ad::Var& x) const;
  ad::Var decode(const ad::Var& z) const;
  Tensor encode(const Tensor& x) const { return encode(ad::constant(x)).value(); }
  Tensor decode(const Tensor& z) const { return decode(ad::constant(z)).value(); }

  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  double latent_scale = 1.0;

 private:
  nn::ParamStore params_;
  std::vector<nn::Conv2d> enc_, dec_;
};

/// Small two-resolution U-Net predicting the noise in z_t, conditioned on the
/// timestep (sinusoidal embedding) and a class token (learned embedding with a
/// dedicated null row).
class Denoiser : MoveOnly {
 public:
  Denoiser(int classes, std::uint64_t seed);

  /// z_t (N,4,h,w); one timestep and token per sample. Timesteps must be in [1, T].
  ad::Var forward(const ad::Var& z_t, const std::vector<int>& t,
                  const std::vector<ConditioningToken>& c) const;
  Tensor predict(const Tensor& z_t, int t, ConditioningToken c) const;

  int classes() const { return classes_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  /// Upper bound for valid timesteps; set from the training schedule.
  int max_timestep = 1000;

 private:
  struct ResBlock {
    nn::Conv2d conv1, conv2, skip;
    nn::Linear emb;
    ad::Var operator()(const ad::Var& x, const ad::Var& emb_act) const;
  };
  ResBlock block(const std::string& name, int cin, int cout, Rng& rng);
  int token_row(ConditioningToken c) const;

  int classes_;
  nn::ParamStore params_;
  nn::Linear time1_, time2_;
  ad::Var class_table_;
  nn::Conv2d in_, down_, up_, out_;
  ResBlock hi1_, lo1_, lo2_, hi2_, hi3_;
};

/// Frozen feature pyramid V(.). Identity mode returns the input as its single feature.
class PerceptualExtractor : MoveOnly {
 public:
  explicit PerceptualExtractor(std::uint64_t seed);
  static PerceptualExtractor identity();

  std::vector<ad::Var> features(const ad::Var& x) const;
  /// Mean over layers of the mean squared feature difference.
  ad::Var distance(const ad::Var& a, const ad::Var& b) const;

  bool is_identity() const { return layers_.empty(); }
  const nn::ParamStore& params() const { return params_; }

 private:
  PerceptualExtractor() = default;
  nn::ParamStore params_;
  std::vector<nn::Conv2d> layers_;
};

/// Strided conv classifier with a zero-initialised head, so a fresh network
/// outputs exactly 0.5. Outputs are clamped to [kProbFloor, 1 - kProbFloor].
class Discriminator : MoveOnly {
 public:
  static constexpr double kProbFloor = 1e-6;

  explicit Discriminator(std::uint64_t seed, double lr = 1e-4);

  /// (N,3,H,W) -> (N,1,1,1) probabilities.
  ad::Var operator()(const ad::Var& x) const;

  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  nn::Adam& optimizer() { return adam_; }

 private:
  nn::ParamStore params_;
  std::vector<nn::Conv2d> convs_;
  nn::Conv2d head_;
  nn::Adam adam_;
};

/// Read-only view of the trained stack used during restoration.
struct ModelSet {
  const Autoencoder* ae = nullptr;
  const Denoiser* denoiser = nullptr;
  const PerceptualExtractor* perceptual = nullptr;
};

/// Enables gradients on a store for the lifetime of the scope.
class TrainableScope {
 public:
  explicit TrainableScope(nn::ParamStore& store) : store_(store) { store_.set_trainable(true); }
  ~TrainableScope() { store_.set_trainable(false); }
  TrainableScope(const TrainableScope&) = delete;
  TrainableScope& operator=(const TrainableScope&) = delete;

 private:
  nn::ParamStore& store_;
};

/// Sinusoidal embedding of integer timesteps, (N,dim,1,1).
Tensor timestep_embedding(const std::vector<int>& t, int dim);

}  // namespace ldrps::models
