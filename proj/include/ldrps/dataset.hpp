#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ldrps/rng.hpp"
#include "ldrps/tensor.hpp"

namespace ldrps {

struct LabeledImage {
  std::string name;  // file name relative to the dataset directory
  Tensor image;      // (1,3,H,W) in [0,1]
  int label = 0;
};

/// Directory of PNGs plus `manifest.txt` with one "<file> <class id>" line per image.
struct Dataset {
  std::vector<LabeledImage> items;
  int classes = 0;

  std::size_t size() const { return items.size(); }

  static Dataset load(const std::filesystem::path& dir);
  void save(const std::filesystem::path& dir) const;

  /// (N,3,H,W) in [-1,1] for the given indices.
  Tensor batch_signed(const std::vector<std::size_t>& indices) const;
};

inline constexpr int kToyClasses = 4;
const char* toy_class_name(int label);

/// One procedurally rendered scene: a coloured shape (class = shape type:
/// circle, square, triangle, cross) over a smooth gradient with a faint
/// sinusoidal texture. Returned in [0,1], shape (1,3,size,size).
Tensor render_toy_scene(int label, int size, Rng& rng);

/// Balanced toy set, deterministic in `seed`.
Dataset generate_toy_dataset(int count, int size, std::uint64_t seed);

}  // namespace ldrps
