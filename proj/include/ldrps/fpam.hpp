#pragma once

#include <cstdint>
#include <filesystem>

#include "ldrps/models.hpp"

namespace ldrps::fpam {

struct FpamConfig {
  double lambda1 = 1.0;  // pixel consistency with the decoder output
  double lambda2 = 0.1;  // perceptual consistency
  double lambda3 = 0.01; // adversarial pull toward the degraded domain
  double lr = 1e-3;      // psi optimiser
  double d1_lr = 1e-4;
  double guided_lr_scale = 1.0;  // psi and D1 rates are multiplied by this once guidance is on
  std::uint64_t seed = 0;
};

/// psi(u) = h2(h1(u)) + p * h1(u) on decoded images u, with
/// h1(u) = u + a(u) and h2(u) = u + b(u); a and b end in zeroed convs and
/// p = 0, so psi is the identity until the first update.
class Fpam : models::MoveOnly {
 public:
  explicit Fpam(const FpamConfig& cfg);

  ad::Var apply_image(const ad::Var& decoded) const;
  ad::Var h1(const ad::Var& decoded) const;
  /// psi(z) = apply_image(f(z)) with the decoder frozen.
  ad::Var apply(const ad::Var& z, const models::Autoencoder& ae) const { return apply_image(ae.decode(z)); }

  const ad::Var& p() const { return p_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  nn::Adam& optimizer() { return adam_; }
  const FpamConfig& config() const { return cfg_; }

 private:
  FpamConfig cfg_;
  nn::ParamStore params_;
  nn::Conv2d a0_, a1_, a2_, b0_, b1_, b2_;
  ad::Var p_;
  nn::Adam adam_;
};

/// lambda1 mse(f, psi) + lambda2 Vdist(f, psi) + lambda3 mean log(1 - D1(psi)).
ad::Var fpam_loss(const ad::Var& decoded, const ad::Var& psi, const models::PerceptualExtractor& v,
                  const models::Discriminator& d1, const FpamConfig& cfg);

/// mean -log D1(y) over y repeated to psi's batch, plus mean -log(1 - D1(psi)).
ad::Var d1_loss(const Tensor& y, const Tensor& psi, const models::Discriminator& d1);

struct StepResult {
  double s_psi = 0.0;
  double s_dis = 0.0;
  Tensor decoded;  // f(z_pair)
  Tensor psi;      // psi(z_pair) before this step's update
};

/// One psi update on S_psi, then one D1 update on S_dis. z_pair is read only;
/// the decoder and perceptual network are never written.
StepResult train_step(const Tensor& z_pair, const Tensor& y, const models::Autoencoder& ae,
                      const models::PerceptualExtractor& v, models::Discriminator& d1, Fpam& s);

void save_fpam(const std::filesystem::path& path, const Fpam& s);

}  // namespace ldrps::fpam
