#include "ldrps/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "ldrps/errors.hpp"
#include "ldrps/image_io.hpp"

namespace ldrps {
namespace fs = std::filesystem;

const char* toy_class_name(int label) {
  static constexpr std::array<const char*, kToyClasses> names{"circle", "square", "triangle", "cross"};
  return label >= 0 && label < kToyClasses ? names[static_cast<std::size_t>(label)] : "unknown";
}

Dataset Dataset::load(const fs::path& dir) {
  const fs::path manifest = dir / "manifest.txt";
  std::ifstream in(manifest);
  if (!in) throw IoError(manifest.string(), "dataset manifest not found");
  Dataset ds;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    LabeledImage item;
    if (!(ls >> item.name >> item.label) || item.label < 0) {
      throw IoError(manifest.string(), "malformed line " + std::to_string(lineno));
    }
    item.image = load_image(dir / item.name);
    ds.classes = std::max(ds.classes, item.label + 1);
    ds.items.push_back(std::move(item));
  }
  if (ds.items.empty()) throw IoError(manifest.string(), "dataset is empty");
  return ds;
}

void Dataset::save(const fs::path& dir) const {
  fs::create_directories(dir);
  const fs::path manifest = dir / "manifest.txt";
  std::ofstream out(manifest);
  if (!out) throw IoError(manifest.string(), "cannot write manifest");
  out << "# file class\n";
  for (const auto& item : items) {
    save_image(dir / item.name, item.image);
    out << item.name << ' ' << item.label << '\n';
  }
  if (!out) throw IoError(manifest.string(), "write failed");
}

Tensor Dataset::batch_signed(const std::vector<std::size_t>& indices) const {
  if (indices.empty()) throw UsageError("empty batch");
  const Shape s = items.at(indices[0]).image.shape();
  Tensor out({static_cast<int>(indices.size()), 3, s.h, s.w});
  const std::size_t ps = s.per_sample();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Tensor& img = items.at(indices[i]).image;
    if (!(img.shape() == s)) throw UsageError("dataset images differ in size");
    double* dst = out.sample(static_cast<int>(i));
    for (std::size_t k = 0; k < ps; ++k) dst[k] = 2.0 * img[k] - 1.0;
  }
  return out;
}

namespace {

struct Color {
  double r, g, b;
  double mean() const { return (r + g + b) / 3.0; }
};

Color random_color(Rng& rng) { return {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)}; }

bool inside(int label, double x, double y, double cx, double cy, double r) {
  const double dx = x - cx, dy = y - cy;
  switch (label) {
    case 0:
      return dx * dx + dy * dy <= r * r;
    case 1:
      return std::abs(dx) <= 0.8 * r && std::abs(dy) <= 0.8 * r;
    case 2: {
      // upward triangle with apex at (cx, cy - r)
      const double top = cy - r, bottom = cy + 0.8 * r;
      if (y < top || y > bottom) return false;
      const double half = (y - top) / (bottom - top) * r;
      return std::abs(dx) <= half;
    }
    case 3: {
      const double arm = 0.32 * r;
      return (std::abs(dx) <= arm && std::abs(dy) <= r) || (std::abs(dy) <= arm && std::abs(dx) <= r);
    }
    default:
      throw UsageError("unknown toy class " + std::to_string(label));
  }
}

}  // namespace

Tensor render_toy_scene(int label, int size, Rng& rng) {
  const Color c1 = random_color(rng);
  const Color c2 = random_color(rng);
  const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double fx = rng.uniform(-0.5, 0.5), fy = rng.uniform(-0.5, 0.5), phase = rng.uniform(0.0, 6.3);
  const double tex_amp = rng.uniform(0.0, 0.06);
  Color shape = random_color(rng);
  const double bg_mean = 0.5 * (c1.mean() + c2.mean());
  for (int tries = 0; tries < 50 && std::abs(shape.mean() - bg_mean) < 0.25; ++tries) shape = random_color(rng);
  const double scale = size / 32.0;
  const double cx = size / 2.0 + rng.uniform(-3.0, 3.0) * scale;
  const double cy = size / 2.0 + rng.uniform(-3.0, 3.0) * scale;
  const double radius = rng.uniform(7.0, 11.0) * scale;

  Tensor img({1, 3, size, size});
  constexpr int ss = 4;  // supersampling per axis
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double u = ((x - size / 2.0) * ca + (y - size / 2.0) * sa) / size + 0.5;
      const double w = std::clamp(u, 0.0, 1.0);
      const double tex = tex_amp * std::sin(fx * x + fy * y + phase);
      const Color bg{c1.r + w * (c2.r - c1.r) + tex, c1.g + w * (c2.g - c1.g) + tex,
                     c1.b + w * (c2.b - c1.b) + tex};
      int hits = 0;
      for (int sy = 0; sy < ss; ++sy)
        for (int sx = 0; sx < ss; ++sx) {
          hits += inside(label, x + (sx + 0.5) / ss, y + (sy + 0.5) / ss, cx, cy, radius) ? 1 : 0;
        }
      const double cov = static_cast<double>(hits) / (ss * ss);
      img.at(0, 0, y, x) = std::clamp(cov * shape.r + (1.0 - cov) * bg.r, 0.0, 1.0);
      img.at(0, 1, y, x) = std::clamp(cov * shape.g + (1.0 - cov) * bg.g, 0.0, 1.0);
      img.at(0, 2, y, x) = std::clamp(cov * shape.b + (1.0 - cov) * bg.b, 0.0, 1.0);
    }
  }
  return img;
}

Dataset generate_toy_dataset(int count, int size, std::uint64_t seed) {
  if (count < 1) throw ConfigError("dataset count must be >= 1");
  if (size % 4 != 0) throw ConfigError("image size must be divisible by 4");
  Rng rng(seed, "toy-dataset");
  Dataset ds;
  ds.classes = kToyClasses;
  for (int i = 0; i < count; ++i) {
    LabeledImage item;
    item.label = i % kToyClasses;
    char name[32];
    std::snprintf(name, sizeof name, "%05d.png", i);
    item.name = name;
    // quantise to 8 bits so in-memory and on-disk sets agree
    item.image = from_rgb8(to_rgb8(render_toy_scene(item.label, size, rng)));
    ds.items.push_back(std::move(item));
  }
  return ds;
}

}  // namespace ldrps
