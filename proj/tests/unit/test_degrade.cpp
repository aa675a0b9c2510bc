#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ldrps/degrade.hpp"
#include "ldrps/errors.hpp"
#include "ldrps/image_io.hpp"
#include "ldrps/metrics.hpp"

using namespace ldrps;
using namespace ldrps::degrade;
using doctest::Approx;
namespace fs = std::filesystem;

namespace {

Tensor random_unit(std::uint64_t seed, int size = 16) {
  Rng rng(seed);
  Tensor x({1, 3, size, size});
  for (auto& v : x.vec()) v = rng.uniform();
  return x;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("ldrps_test_" + name);
  fs::remove_all(d);
  return d;
}

}  // namespace

TEST_CASE("identity and boundary cases") {
  const Tensor x = random_unit(1);
  DegradationSpec noise = preset(Kind::gaussian_noise);
  noise.sigma = 0.0;
  CHECK(apply_degradation(x, noise).vec() == x.vec());

  DegradationSpec haze = preset(Kind::haze);
  haze.transmission = 1.0;
  CHECK(apply_degradation(x, haze).vec() == x.vec());
  haze.transmission = 0.0;
  for (double v : apply_degradation(x, haze).vec()) CHECK(v == Approx(0.9).epsilon(1e-15));
}

TEST_CASE("haze closed form") {
  DegradationSpec haze = preset(Kind::haze);
  haze.transmission = 0.5;
  haze.airlight = 0.9;
  CHECK(apply_degradation(Tensor({1, 3, 2, 2}, 0.2), haze)[0] == Approx(0.55).epsilon(1e-15));
}

TEST_CASE("low light follows gain times power") {
  DegradationSpec s = preset(Kind::low_light);
  s.sigma = 0.0;
  const Tensor x = random_unit(2);
  const Tensor y = apply_degradation(x, s);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == Approx(0.3 * std::pow(x[i], 2.5)).epsilon(1e-14));
}

TEST_CASE("grayscale is exact and idempotent") {
  const DegradationSpec g = preset(Kind::grayscale);
  const Tensor y = apply_degradation(random_unit(3), g);
  const std::size_t plane = y.shape().plane();
  for (std::size_t i = 0; i < plane; ++i) {
    CHECK(y[i] == y[plane + i]);
    CHECK(y[i] == y[2 * plane + i]);
  }
  CHECK(apply_degradation(y, g).vec() == y.vec());
}

TEST_CASE("noise statistics match sigma") {
  DegradationSpec s = preset(Kind::gaussian_noise);
  s.seed = 9;
  // mid-grey keeps clipping negligible at 25/255
  const Tensor x({64, 3, 64, 64}, 0.5);
  const Tensor y = apply_degradation(x, s);
  double sum = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = y[i] - x[i];
    sum += d;
    sq += d * d;
  }
  const double n = static_cast<double>(y.size());
  const double sd = std::sqrt(sq / n - (sum / n) * (sum / n));
  CHECK(sd == Approx(25.0 / 255.0).epsilon(0.05));
}

TEST_CASE("outputs stay in range and depend only on the seed") {
  for (Kind k : {Kind::gaussian_noise, Kind::low_light, Kind::haze, Kind::grayscale}) {
    DegradationSpec s = preset(k);
    s.seed = 4;
    const Tensor x = random_unit(5);
    const Tensor a = apply_degradation(x, s);
    for (double v : a.vec()) CHECK((v >= 0.0 && v <= 1.0));
    CHECK(apply_degradation(x, s).vec() == a.vec());
  }
  DegradationSpec s = preset(Kind::gaussian_noise);
  const Tensor x = random_unit(6);
  s.seed = 1;
  const Tensor a = apply_degradation(x, s);
  s.seed = 2;
  CHECK(apply_degradation(x, s).vec() != a.vec());
}

TEST_CASE("composite applies children left to right") {
  DegradationSpec comp;
  comp.kind = Kind::composite;
  DegradationSpec haze = preset(Kind::haze);
  DegradationSpec gray = preset(Kind::grayscale);
  comp.children = {haze, gray};
  const Tensor x = random_unit(7);
  const Tensor expect = apply_degradation(apply_degradation(x, haze), gray);
  const Tensor got = apply_degradation(x, comp);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(got[i] == Approx(expect[i]).epsilon(1e-15));
  CHECK(comp.describe() == "composite[haze(t=0.6,A=0.9),grayscale]");
}

TEST_CASE("spec validation and parsing") {
  CHECK(parse_kind("low_light") == Kind::low_light);
  CHECK_THROWS_AS(parse_kind("blur"), ConfigError);
  DegradationSpec s;
  s.sigma = -1.0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = {};
  s.transmission = 1.5;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = {};
  s.kind = Kind::composite;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  CHECK(preset(Kind::low_light).sigma == Approx(10.0 / 255.0));
}

TEST_CASE("paired set is complete, reproducible and records its baseline") {
  const Dataset data = generate_toy_dataset(20, 32, 3);
  DegradationSpec s = preset(Kind::gaussian_noise);
  s.seed = 11;
  const fs::path a = scratch_dir("pairs_a"), b = scratch_dir("pairs_b");
  const PairedSetSummary sa = make_paired_set(data, s, 16, a);
  make_paired_set(data, s, 16, b);
  CHECK(sa.count == 16);
  for (int i = 0; i < 16; ++i) {
    char name[16];
    std::snprintf(name, sizeof name, "%03d.png", i);
    REQUIRE(fs::exists(a / "clean" / name));
    REQUIRE(fs::exists(a / "degraded" / name));
    CHECK(slurp(a / "degraded" / name) == slurp(b / "degraded" / name));
  }
  CHECK(slurp(a / "manifest.txt") == slurp(b / "manifest.txt"));
  CHECK_FALSE(fs::exists(a / "clean" / "016.png"));

  // the recorded baseline is what evaluating the written files gives
  const metrics::MetricReport r = metrics::evaluate_set(a / "degraded", a / "clean");
  CHECK(r.psnr_mean == Approx(sa.baseline_psnr).epsilon(1e-12));
  CHECK(r.ssim_mean == Approx(sa.baseline_ssim).epsilon(1e-12));
  const std::string manifest = slurp(a / "manifest.txt");
  CHECK(manifest.find("kind = gaussian_noise") != std::string::npos);
  CHECK(manifest.find("seed = 11") != std::string::npos);

  CHECK_THROWS_AS(make_paired_set(data, s, 21, scratch_dir("pairs_c")), ConfigError);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("grayscale paired set has equal channels on disk") {
  const Dataset data = generate_toy_dataset(4, 16, 5);
  const fs::path d = scratch_dir("pairs_gray");
  make_paired_set(data, preset(Kind::grayscale), 4, d);
  const Rgb8 img = read_png(d / "degraded" / "002.png");
  for (std::size_t i = 0; i < img.pixels.size(); i += 3) {
    CHECK(img.pixels[i] == img.pixels[i + 1]);
    CHECK(img.pixels[i] == img.pixels[i + 2]);
  }
  fs::remove_all(d);
}
