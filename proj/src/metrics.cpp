#include "ldrps/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>

#include "ldrps/errors.hpp"
#include "ldrps/image_io.hpp"

namespace ldrps::metrics {
namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 1e-4;
constexpr double kC2 = 9e-4;

std::vector<double> luminance(const Tensor& x, int n) {
  const Shape s = x.shape();
  std::vector<double> out(s.plane(), 0.0);
  const double* p = x.sample(n);
  for (int c = 0; c < s.c; ++c)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += p[static_cast<std::size_t>(c) * s.plane() + i];
  for (auto& v : out) v /= s.c;
  return out;
}

std::vector<double> gaussian_kernel() {
  std::vector<double> g(kWindow);
  double sum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    sum += g[static_cast<std::size_t>(i)];
  }
  for (auto& v : g) v /= sum;
  return g;
}

// Separable valid-mode filtering of an h x w plane.
std::vector<double> filter(const std::vector<double>& x, int h, int w, const std::vector<double>& g) {
  const int wo = w - kWindow + 1, ho = h - kWindow + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * wo), out(static_cast<std::size_t>(ho) * wo);
  for (int y = 0; y < h; ++y)
    for (int xo = 0; xo < wo; ++xo) {
      double s = 0.0;
      for (int k = 0; k < kWindow; ++k) s += g[static_cast<std::size_t>(k)] * x[static_cast<std::size_t>(y) * w + xo + k];
      tmp[static_cast<std::size_t>(y) * wo + xo] = s;
    }
  for (int yo = 0; yo < ho; ++yo)
    for (int xo = 0; xo < wo; ++xo) {
      double s = 0.0;
      for (int k = 0; k < kWindow; ++k) s += g[static_cast<std::size_t>(k)] * tmp[static_cast<std::size_t>(yo + k) * wo + xo];
      out[static_cast<std::size_t>(yo) * wo + xo] = s;
    }
  return out;
}

}  // namespace

double psnr(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "psnr");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "ssim");
  const Shape s = a.shape();
  if (s.h < kWindow || s.w < kWindow) throw UsageError("ssim: image " + s.str() + " smaller than the 11x11 window");
  const auto g = gaussian_kernel();
  double total = 0.0;
  for (int n = 0; n < s.n; ++n) {
    const auto x = luminance(a, n), y = luminance(b, n);
    std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = filter(x, s.h, s.w, g), my = filter(y, s.h, s.w, g);
    const auto sxx = filter(xx, s.h, s.w, g), syy = filter(yy, s.h, s.w, g), sxy = filter(xy, s.h, s.w, g);
    double sum = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cxy = sxy[i] - mx[i] * my[i];
      sum += ((2.0 * mx[i] * my[i] + kC1) * (2.0 * cxy + kC2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + kC1) * (vx + vy + kC2));
    }
    total += sum / static_cast<double>(mx.size());
  }
  return total / s.n;
}

MetricReport summarize(std::vector<ImageScore> rows) {
  if (rows.empty()) throw UsageError("metric report needs at least one image");
  MetricReport r;
  r.rows = std::move(rows);
  const double n = static_cast<double>(r.rows.size());
  for (const auto& row : r.rows) {
    r.psnr_mean += row.psnr;
    r.ssim_mean += row.ssim;
  }
  r.psnr_mean /= n;
  r.ssim_mean /= n;
  for (const auto& row : r.rows) {
    r.psnr_std += (row.psnr - r.psnr_mean) * (row.psnr - r.psnr_mean);
    r.ssim_std += (row.ssim - r.ssim_mean) * (row.ssim - r.ssim_mean);
  }
  r.psnr_std = std::sqrt(r.psnr_std / n);
  r.ssim_std = std::sqrt(r.ssim_std / n);
  return r;
}

void MetricReport::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError(path.string(), "cannot write report");
  out << std::setprecision(10) << "file,psnr_db,ssim\n";
  for (const auto& r : rows) out << r.file << ',' << r.psnr << ',' << r.ssim << '\n';
  out << "mean," << psnr_mean << ',' << ssim_mean << '\n';
  out << "std," << psnr_std << ',' << ssim_std << '\n';
  if (!out) throw IoError(path.string(), "write failed");
}

MetricReport evaluate_set(const std::filesystem::path& restored_dir, const std::filesystem::path& clean_dir) {
  namespace fs = std::filesystem;
  auto pngs = [](const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError(dir.string(), "not a directory");
    std::set<std::string> names;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file() && e.path().extension() == ".png") names.insert(e.path().filename().string());
    }
    return names;
  };
  const auto restored = pngs(restored_dir), clean = pngs(clean_dir);
  std::string missing;
  for (const auto& n : restored)
    if (!clean.count(n)) missing += " " + (clean_dir / n).string();
  for (const auto& n : clean)
    if (!restored.count(n)) missing += " " + (restored_dir / n).string();
  if (!missing.empty()) throw IoError(restored_dir.string(), "unpaired files:" + missing);
  if (restored.empty()) throw IoError(restored_dir.string(), "no PNG files");
  std::vector<ImageScore> rows;
  for (const auto& n : restored) {
    const Tensor a = load_image(restored_dir / n), b = load_image(clean_dir / n);
    if (!(a.shape() == b.shape())) throw IoError((restored_dir / n).string(), "size differs from clean counterpart");
    rows.push_back({n, psnr(a, b), ssim(a, b)});
  }
  return summarize(std::move(rows));
}

void write_psnr_bar_plot(const MetricReport& report, const std::filesystem::path& path) {
  constexpr int kBar = 12, kGap = 4, kHeight = 160, kMargin = 8;
  const int n = static_cast<int>(report.rows.size());
  Rgb8 img;
  img.width = 2 * kMargin + n * (kBar + kGap);
  img.height = kHeight + 2 * kMargin;
  img.pixels.assign(static_cast<std::size_t>(img.width) * img.height * 3, 255);
  double top = 1.0;
  for (const auto& r : report.rows) top = std::max(top, r.psnr);
  auto put = [&](int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    const std::size_t i = (static_cast<std::size_t>(y) * img.width + x) * 3;
    img.pixels[i] = r;
    img.pixels[i + 1] = g;
    img.pixels[i + 2] = b;
  };
  const int base = kMargin + kHeight;
  for (int i = 0; i < n; ++i) {
    const int h = static_cast<int>(std::lround(kHeight * std::max(0.0, report.rows[static_cast<std::size_t>(i)].psnr) / top));
    const int x0 = kMargin + i * (kBar + kGap);
    for (int y = base - h; y < base; ++y)
      for (int x = x0; x < x0 + kBar; ++x) put(x, y, 60, 110, 190);
  }
  const int mean_y = base - static_cast<int>(std::lround(kHeight * std::max(0.0, report.psnr_mean) / top));
  for (int x = 0; x < img.width; ++x) put(x, std::clamp(mean_y, 0, img.height - 1), 200, 40, 40);
  for (int x = 0; x < img.width; ++x) put(x, base, 0, 0, 0);
  write_png(path, img);
}

}  // namespace ldrps::metrics
