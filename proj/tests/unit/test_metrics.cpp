#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "ldrps/errors.hpp"
#include "ldrps/image_io.hpp"
#include "ldrps/metrics.hpp"
#include "ldrps/rng.hpp"

using namespace ldrps;
using namespace ldrps::metrics;
using doctest::Approx;
namespace fs = std::filesystem;

namespace {

Tensor random_unit(std::uint64_t seed, int h = 24, int w = 20) {
  Rng rng(seed);
  Tensor x({1, 3, h, w});
  for (auto& v : x.vec()) v = rng.uniform();
  return x;
}

// Direct 2-D window sum, no separability.
double ssim_reference(const Tensor& a, const Tensor& b) {
  const Shape s = a.shape();
  double g[11][11], gs = 0.0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) {
      g[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2.0 * 1.5 * 1.5));
      gs += g[i][j];
    }
  auto lum = [&](const Tensor& t, int y, int x) { return (t.at(0, 0, y, x) + t.at(0, 1, y, x) + t.at(0, 2, y, x)) / 3.0; };
  double total = 0.0;
  int count = 0;
  for (int y0 = 0; y0 + 11 <= s.h; ++y0)
    for (int x0 = 0; x0 + 11 <= s.w; ++x0) {
      double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          const double w = g[i][j] / gs, p = lum(a, y0 + i, x0 + j), q = lum(b, y0 + i, x0 + j);
          mx += w * p;
          my += w * q;
          xx += w * p * p;
          yy += w * q * q;
          xy += w * p * q;
        }
      const double vx = xx - mx * mx, vy = yy - my * my, c = xy - mx * my;
      total += (2 * mx * my + 1e-4) * (2 * c + 9e-4) / ((mx * mx + my * my + 1e-4) * (vx + vy + 9e-4));
      ++count;
    }
  return total / count;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("ldrps_test_" + name);
  fs::remove_all(d);
  return d;
}

}  // namespace

TEST_CASE("psnr") {
  const Tensor a = random_unit(1);
  CHECK(psnr(a, a) == kPsnrCap);
  Tensor b = a;
  for (auto& v : b.vec()) v += 0.0625;
  CHECK(psnr(a, b) == Approx(10.0 * std::log10(256.0)).epsilon(1e-12));
  CHECK(psnr(a, b) == Approx(24.0824).epsilon(1e-5));
  const Tensor c = random_unit(2);
  CHECK(psnr(a, c) == psnr(c, a));
  CHECK_THROWS_AS(psnr(a, Tensor({1, 3, 4, 4})), UsageError);
}

TEST_CASE("ssim closed forms") {
  const Tensor a = random_unit(3);
  CHECK(ssim(a, a) == Approx(1.0).epsilon(1e-12));
  const Tensor lo({1, 3, 16, 16}, 0.4), hi({1, 3, 16, 16}, 0.6);
  CHECK(ssim(lo, hi) == Approx((2 * 0.24 + 1e-4) / (0.16 + 0.36 + 1e-4)).epsilon(1e-12));
  CHECK(ssim(lo, hi) == Approx(0.92309).epsilon(1e-5));
  CHECK_THROWS_AS(ssim(Tensor({1, 3, 10, 16}), Tensor({1, 3, 10, 16})), UsageError);
}

TEST_CASE("ssim matches a direct windowed reference") {
  for (std::uint64_t seed = 10; seed < 20; ++seed) {
    const Tensor a = random_unit(seed);
    Tensor b = a;
    Rng rng(seed + 100);
    for (auto& v : b.vec()) v = std::clamp(v + 0.2 * rng.normal(), 0.0, 1.0);
    const double s = ssim(a, b);
    CHECK(s == Approx(ssim_reference(a, b)).epsilon(1e-12));
    CHECK(std::abs(s) <= 1.0);
    CHECK(s == Approx(ssim(b, a)).epsilon(1e-12));
  }
}

TEST_CASE("summary statistics") {
  const MetricReport r = summarize({{"a", 10.0, 0.5}, {"b", 20.0, 0.7}});
  CHECK(r.psnr_mean == 15.0);
  CHECK(r.psnr_std == 5.0);
  CHECK(r.ssim_mean == Approx(0.6));
  CHECK(r.ssim_std == Approx(0.1));
  CHECK_THROWS_AS(summarize({}), UsageError);
}

TEST_CASE("evaluate_set pairs by name and reports") {
  const fs::path a = scratch_dir("eval_a"), b = scratch_dir("eval_b");
  for (int i = 0; i < 3; ++i) {
    const Tensor img = from_rgb8(to_rgb8(random_unit(static_cast<std::uint64_t>(i), 16, 16)));
    save_image(a / ("img" + std::to_string(i) + ".png"), img);
    save_image(b / ("img" + std::to_string(i) + ".png"), img);
  }
  const MetricReport same = evaluate_set(a, b);
  CHECK(same.count() == 3);
  CHECK(same.ssim_mean == Approx(1.0).epsilon(1e-12));
  CHECK(same.psnr_mean == kPsnrCap);

  const fs::path csv = a / "report.csv";
  same.write_csv(csv);
  std::ifstream in(csv);
  std::string line;
  int lines = 0;
  std::getline(in, line);
  CHECK(line == "file,psnr_db,ssim");
  while (std::getline(in, line)) ++lines;
  CHECK(lines == 5);

  write_psnr_bar_plot(same, a / "plot.png");
  const Rgb8 plot = read_png(a / "plot.png");
  CHECK(plot.width > 0);

  save_image(a / "extra.png", random_unit(9, 16, 16));
  try {
    evaluate_set(a, b);
    FAIL("expected an unpaired-file error");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("extra.png") != std::string::npos);
  }
  fs::remove_all(a);
  fs::remove_all(b);
}
