#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ldrps/degrade.hpp"
#include "ldrps/sampler.hpp"
#include "ldrps/training.hpp"

namespace ldrps::config {

struct ScheduleSection {
  int T = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
};

struct ModelsSection {
  std::uint64_t seed = 0;
  int image_size = 32;
  std::string dataset_dir;     // required by train
  int dataset_count = 2048;    // gen-dataset
  std::string checkpoint_dir;  // defaults to <runs>/checkpoints
  models::AutoencoderTrainConfig ae;
  models::DenoiserTrainConfig denoiser;
  std::string perceptual = "random";  // or "identity"
  std::uint64_t perceptual_seed = 7;
};

struct SamplerSection {
  sampler::SamplerConfig cfg;
  std::uint64_t seed = 0;
  int token = -1;  // class id, -1 for the null token
  bool token_from_manifest = true;  // prefer per-image labels from a paired-set manifest
};

struct DegradeSection {
  degrade::DegradationSpec spec;
  std::vector<std::string> children;  // composite kinds, applied left to right
  int count = 16;
};

struct Config {
  ScheduleSection schedule;
  ModelsSection models;
  fpam::FpamConfig fpam;
  guidance::GuidanceConfig guidance;
  SamplerSection sampler;
  DegradeSection degrade;

  NoiseSchedule make_schedule() const { return NoiseSchedule(schedule.T, schedule.beta_start, schedule.beta_end); }
  sampler::RestoreConfig restore_config() const;
  degrade::DegradationSpec degradation() const;
};

/// Parses a TOML file; unknown sections or keys and ill-typed values throw ConfigError naming the key.
Config load(const std::filesystem::path& path);
Config parse(const std::string& toml_text, const std::string& origin = "<string>");

/// Applies "section.key=value".
void apply_override(Config& cfg, const std::string& assignment);

/// Every key with its effective value, as TOML and as JSON.
std::string to_toml(const Config& cfg);
nlohmann::json to_json(const Config& cfg);

/// All "section.key" names the loader accepts.
std::vector<std::string> known_keys();

}  // namespace ldrps::config
