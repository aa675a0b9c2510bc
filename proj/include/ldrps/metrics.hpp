#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ldrps/tensor.hpp"

namespace ldrps::metrics {

inline constexpr double kPsnrCap = 100.0;

/// 10 log10(1 / MSE) for images in [0,1]; kPsnrCap when MSE is zero.
double psnr(const Tensor& a, const Tensor& b);

/// Single-scale SSIM on the channel-mean luminance: 11x11 Gaussian window
/// (sigma 1.5) over valid positions, C1 = 0.01^2, C2 = 0.03^2, mean of the map.
double ssim(const Tensor& a, const Tensor& b);

struct ImageScore {
  std::string file;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct MetricReport {
  std::vector<ImageScore> rows;
  double psnr_mean = 0.0, psnr_std = 0.0;
  double ssim_mean = 0.0, ssim_std = 0.0;

  std::size_t count() const { return rows.size(); }
  /// Columns file, psnr_db, ssim, then `mean` and `std` rows.
  void write_csv(const std::filesystem::path& path) const;
};

MetricReport summarize(std::vector<ImageScore> rows);

/// Pairs PNGs by file name; any file without a counterpart aborts with the list.
MetricReport evaluate_set(const std::filesystem::path& restored_dir, const std::filesystem::path& clean_dir);

/// Bar chart of per-image PSNR as a PNG.
void write_psnr_bar_plot(const MetricReport& report, const std::filesystem::path& path);

}  // namespace ldrps::metrics
