#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "ldrps/dataset.hpp"
#include "ldrps/errors.hpp"
#include "ldrps/image_io.hpp"

using namespace ldrps;
namespace fs = std::filesystem;

namespace {
fs::path scratch(const char* name) {
  fs::path p = fs::temp_directory_path() / "ldrps_test_dataset" / name;
  fs::remove_all(p);
  return p;
}
}  // namespace

TEST_CASE("png round trip is exact at 8 bits") {
  Rng rng(1);
  Rgb8 img{7, 5, {}};
  for (int i = 0; i < 7 * 5 * 3; ++i) img.pixels.push_back(static_cast<std::uint8_t>(rng.index(256)));
  const fs::path p = scratch("rt") / "a.png";
  write_png(p, img);
  const Rgb8 back = read_png(p);
  CHECK(back.width == 7);
  CHECK(back.height == 5);
  CHECK(back.pixels == img.pixels);
  CHECK(to_rgb8(from_rgb8(img)).pixels == img.pixels);
}

TEST_CASE("png errors carry the path") {
  const fs::path dir = scratch("bad");
  fs::create_directories(dir);
  CHECK_THROWS_AS(read_png(dir / "missing.png"), IoError);
  std::ofstream(dir / "junk.png") << "not a png";
  CHECK_THROWS_AS(read_png(dir / "junk.png"), IoError);
}

TEST_CASE("toy dataset is balanced, in range and deterministic") {
  const Dataset a = generate_toy_dataset(16, 32, 7);
  const Dataset b = generate_toy_dataset(16, 32, 7);
  REQUIRE(a.size() == 16);
  CHECK(a.classes == kToyClasses);
  int counts[kToyClasses] = {};
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& it = a.items[i];
    ++counts[it.label];
    CHECK(it.image.shape() == Shape{1, 3, 32, 32});
    for (double v : it.image.vec()) CHECK((v >= 0.0 && v <= 1.0));
    CHECK(it.image.vec() == b.items[i].image.vec());
  }
  for (int c : counts) CHECK(c == 4);
  CHECK(generate_toy_dataset(4, 32, 8).items[0].image.vec() != a.items[0].image.vec());
}

TEST_CASE("dataset save and load agree") {
  const Dataset a = generate_toy_dataset(8, 32, 3);
  const fs::path dir = scratch("saved");
  a.save(dir);
  const Dataset b = Dataset::load(dir);
  REQUIRE(b.size() == a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(b.items[i].label == a.items[i].label);
    CHECK(b.items[i].image.vec() == a.items[i].image.vec());
  }
  const Tensor batch = b.batch_signed({0, 3});
  CHECK(batch.shape() == Shape{2, 3, 32, 32});
  CHECK(batch[0] == doctest::Approx(2.0 * a.items[0].image[0] - 1.0));
  CHECK_THROWS_AS(Dataset::load(scratch("none")), IoError);
}
