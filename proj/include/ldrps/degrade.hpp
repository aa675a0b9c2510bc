#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ldrps/dataset.hpp"
#include "ldrps/tensor.hpp"

namespace ldrps::degrade {

enum class Kind { gaussian_noise, low_light, haze, grayscale, composite };

struct DegradationSpec {
  Kind kind = Kind::gaussian_noise;
  double sigma = 25.0 / 255.0;  // additive noise std (gaussian_noise, low_light)
  double gamma_exp = 2.5;       // low_light exponent
  double gain = 0.3;            // low_light gain
  double transmission = 0.6;    // haze t
  double airlight = 0.9;        // haze A
  std::vector<DegradationSpec> children;  // composite, applied left to right
  std::uint64_t seed = 0;

  /// Throws ConfigError for out-of-range parameters.
  void validate() const;
  std::string describe() const;
};

Kind parse_kind(const std::string& name);
const char* kind_name(Kind k);

/// Task presets: noise sigma 25/255, low light (2.5, 0.3, 10/255), haze (0.6, 0.9).
DegradationSpec preset(Kind k);

/// x in [0,1]; deterministic in (spec, spec.seed); output clamped to [0,1].
Tensor apply_degradation(const Tensor& x, const DegradationSpec& spec);

struct PairedSetSummary {
  std::size_t count = 0;
  double baseline_psnr = 0.0;  // mean PSNR(degraded, clean)
  double baseline_ssim = 0.0;
};

/// Writes clean/NNN.png, degraded/NNN.png and manifest.txt (key = value lines
/// with the spec, seed, per-image labels and the degraded-vs-clean baseline).
/// Image i is degraded with seed derived from (spec.seed, i).
PairedSetSummary make_paired_set(const Dataset& data, const DegradationSpec& spec, std::size_t count,
                                 const std::filesystem::path& dir);

}  // namespace ldrps::degrade
