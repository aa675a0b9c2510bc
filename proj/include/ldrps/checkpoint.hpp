#pragma once

// Self-describing parameter archive:
//   "LDRPS1" | u32 metadata length | metadata JSON | u32 tensor count |
//   per tensor: u32 name length, name, 4 x i32 shape, f32 values (all little-endian).
// Metadata always carries "kind" and the parameter shapes; model-specific keys
// (schedule hash, seed, latent scale, class count) ride along.

#include <filesystem>
#include <string>

#include <json.hpp>

#include "ldrps/nn.hpp"

namespace ldrps {

void save_checkpoint(const std::filesystem::path& path, const std::string& kind, nlohmann::json meta,
                     const nn::ParamStore& params);

/// Reads metadata only.
nlohmann::json read_checkpoint_meta(const std::filesystem::path& path);

/// Loads parameters into a store with the same names and shapes; returns the metadata.
nlohmann::json load_checkpoint(const std::filesystem::path& path, const std::string& expected_kind,
                               nn::ParamStore& params);

/// FNV-1a of the file bytes, recorded in run manifests.
std::uint64_t file_hash(const std::filesystem::path& path);
std::string hex64(std::uint64_t v);

}  // namespace ldrps
