#include "ldrps/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "ldrps/errors.hpp"

namespace ldrps {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Rgb8 read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError(path.string(), "cannot open for reading");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw IoError(path.string(), "not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(path.string(), "libpng init failed");
  }
  Rgb8 img;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(path.string(), "corrupt PNG data");
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  const std::size_t stride = png_get_rowbytes(png, info);
  if (stride != static_cast<std::size_t>(img.width) * 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(path.string(), "unsupported PNG layout");
  }
  img.pixels.resize(stride * static_cast<std::size_t>(img.height));
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  for (int y = 0; y < img.height; ++y) rows[static_cast<std::size_t>(y)] = img.pixels.data() + stride * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png(const std::filesystem::path& path, const Rgb8& img) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError(path.string(), "cannot open for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError(path.string(), "libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError(path.string(), "PNG encode failed");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(img.width) * 3;
  for (int y = 0; y < img.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(img.pixels.data() + stride * y));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(fp.get()) != 0) throw IoError(path.string(), "write failed");
}

Rgb8 to_rgb8(const Tensor& x, int batch_index) {
  const Shape s = x.shape();
  if (s.c != 3) throw UsageError("to_rgb8 expects 3 channels, got " + s.str());
  Rgb8 img;
  img.width = s.w;
  img.height = s.h;
  img.pixels.resize(static_cast<std::size_t>(s.w) * s.h * 3);
  for (int y = 0; y < s.h; ++y)
    for (int xx = 0; xx < s.w; ++xx)
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(x.at(batch_index, c, y, xx), 0.0, 1.0);
        img.pixels[(static_cast<std::size_t>(y) * s.w + xx) * 3 + c] =
            static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
  return img;
}

Tensor from_rgb8(const Rgb8& img) {
  Tensor t({1, 3, img.height, img.width});
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        t.at(0, c, y, x) = img.pixels[(static_cast<std::size_t>(y) * img.width + x) * 3 + c] / 255.0;
      }
  return t;
}

Tensor unit_to_signed(const Tensor& x) {
  Tensor out = x;
  for (auto& v : out.vec()) v = 2.0 * v - 1.0;
  return out;
}

Tensor signed_to_unit(const Tensor& x) {
  Tensor out = x;
  for (auto& v : out.vec()) v = 0.5 * (v + 1.0);
  return out;
}

}  // namespace ldrps
