#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ldrps/tensor.hpp"

namespace ldrps {

/// 8-bit RGB raster in row-major HWC order.
struct Rgb8 {
  int width = 0, height = 0;
  std::vector<std::uint8_t> pixels;
};

Rgb8 read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Rgb8& image);

/// (1,3,H,W) tensor in [0,1]; values are clamped and rounded to 8 bits.
Rgb8 to_rgb8(const Tensor& unit_image, int batch_index = 0);
Tensor from_rgb8(const Rgb8& image);

inline Tensor load_image(const std::filesystem::path& path) { return from_rgb8(read_png(path)); }
inline void save_image(const std::filesystem::path& path, const Tensor& unit_image) {
  write_png(path, to_rgb8(unit_image));
}

/// [0,1] <-> [-1,1]
Tensor unit_to_signed(const Tensor& x);
Tensor signed_to_unit(const Tensor& x);

}  // namespace ldrps
