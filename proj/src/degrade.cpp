#include "ldrps/degrade.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "ldrps/errors.hpp"
#include "ldrps/image_io.hpp"
#include "ldrps/metrics.hpp"
#include "ldrps/rng.hpp"

namespace ldrps::degrade {

Kind parse_kind(const std::string& name) {
  for (Kind k : {Kind::gaussian_noise, Kind::low_light, Kind::haze, Kind::grayscale, Kind::composite}) {
    if (name == kind_name(k)) return k;
  }
  throw ConfigError("unknown degradation kind '" + name + "'");
}

const char* kind_name(Kind k) {
  switch (k) {
    case Kind::gaussian_noise: return "gaussian_noise";
    case Kind::low_light: return "low_light";
    case Kind::haze: return "haze";
    case Kind::grayscale: return "grayscale";
    case Kind::composite: return "composite";
  }
  return "?";
}

DegradationSpec preset(Kind k) {
  DegradationSpec s;
  s.kind = k;
  if (k == Kind::low_light) s.sigma = 10.0 / 255.0;
  return s;
}

void DegradationSpec::validate() const {
  if (!(sigma >= 0.0)) throw ConfigError("degrade.sigma must be >= 0");
  if (!(gain > 0.0 && gain <= 1.0)) throw ConfigError("degrade.gain must be in (0,1]");
  if (!(gamma_exp > 0.0)) throw ConfigError("degrade.gamma_exp must be > 0");
  if (!(transmission >= 0.0 && transmission <= 1.0)) throw ConfigError("degrade.transmission must be in [0,1]");
  if (!(airlight >= 0.0 && airlight <= 1.0)) throw ConfigError("degrade.airlight must be in [0,1]");
  if (kind == Kind::composite) {
    if (children.empty()) throw ConfigError("composite degradation needs at least one child");
    for (const auto& c : children) c.validate();
  }
}

std::string DegradationSpec::describe() const {
  std::ostringstream o;
  o << std::setprecision(10) << kind_name(kind);
  switch (kind) {
    case Kind::gaussian_noise: o << "(sigma=" << sigma << ")"; break;
    case Kind::low_light: o << "(gamma_exp=" << gamma_exp << ",gain=" << gain << ",sigma=" << sigma << ")"; break;
    case Kind::haze: o << "(t=" << transmission << ",A=" << airlight << ")"; break;
    case Kind::grayscale: break;
    case Kind::composite:
      o << "[";
      for (std::size_t i = 0; i < children.size(); ++i) o << (i ? "," : "") << children[i].describe();
      o << "]";
      break;
  }
  return o.str();
}

namespace {

void add_noise(Tensor& y, double sigma, Rng& rng) {
  if (sigma == 0.0) return;
  for (auto& v : y.vec()) v += sigma * rng.normal();
}

void clip(Tensor& y) {
  for (auto& v : y.vec()) v = std::clamp(v, 0.0, 1.0);
}

Tensor apply(const Tensor& x, const DegradationSpec& spec, Rng& rng) {
  Tensor y = x;
  switch (spec.kind) {
    case Kind::gaussian_noise:
      add_noise(y, spec.sigma, rng);
      break;
    case Kind::low_light:
      for (auto& v : y.vec()) v = spec.gain * std::pow(std::max(v, 0.0), spec.gamma_exp);
      add_noise(y, spec.sigma, rng);
      break;
    case Kind::haze:
      for (auto& v : y.vec()) v = spec.transmission * v + spec.airlight * (1.0 - spec.transmission);
      break;
    case Kind::grayscale: {
      const Shape s = y.shape();
      if (s.c != 3) throw UsageError("grayscale expects RGB, got " + s.str());
      const std::size_t plane = s.plane();
      for (int n = 0; n < s.n; ++n) {
        double* p = y.sample(n);
        for (std::size_t i = 0; i < plane; ++i) {
          const double m = (p[i] + p[plane + i] + p[2 * plane + i]) / 3.0;
          p[i] = p[plane + i] = p[2 * plane + i] = m;
        }
      }
      break;
    }
    case Kind::composite:
      for (const auto& child : spec.children) y = apply(y, child, rng);
      break;
  }
  clip(y);
  return y;
}

}  // namespace

Tensor apply_degradation(const Tensor& x, const DegradationSpec& spec) {
  spec.validate();
  Rng rng(spec.seed, "degrade");
  return apply(x, spec, rng);
}

PairedSetSummary make_paired_set(const Dataset& data, const DegradationSpec& spec, std::size_t count,
                                 const std::filesystem::path& dir) {
  spec.validate();
  if (count == 0 || count > data.size()) {
    throw ConfigError("paired set count " + std::to_string(count) + " must be in [1, " + std::to_string(data.size()) +
                      "]");
  }
  namespace fs = std::filesystem;
  fs::create_directories(dir / "clean");
  fs::create_directories(dir / "degraded");
  PairedSetSummary summary;
  summary.count = count;
  std::ostringstream rows;
  rows << std::setprecision(10);
  for (std::size_t i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%03zu.png", i);
    const Tensor clean = from_rgb8(to_rgb8(data.items[i].image));
    DegradationSpec s = spec;
    s.seed = Rng::derive(spec.seed, "pair" + std::to_string(i));
    // quantise so the stored files and the baseline agree exactly
    const Tensor degraded = from_rgb8(to_rgb8(apply_degradation(clean, s)));
    save_image(dir / "clean" / name, clean);
    save_image(dir / "degraded" / name, degraded);
    const double p = metrics::psnr(degraded, clean);
    const double q = metrics::ssim(degraded, clean);
    summary.baseline_psnr += p;
    summary.baseline_ssim += q;
    rows << "image." << name << ".label = " << data.items[i].label << '\n';
    rows << "image." << name << ".baseline_psnr_db = " << p << '\n';
  }
  summary.baseline_psnr /= static_cast<double>(count);
  summary.baseline_ssim /= static_cast<double>(count);

  const fs::path manifest = dir / "manifest.txt";
  std::ofstream out(manifest);
  if (!out) throw IoError(manifest.string(), "cannot write manifest");
  out << std::setprecision(10);
  out << "kind = " << kind_name(spec.kind) << '\n';
  out << "spec = " << spec.describe() << '\n';
  out << "seed = " << spec.seed << '\n';
  out << "count = " << count << '\n';
  out << "baseline_psnr_db = " << summary.baseline_psnr << '\n';
  out << "baseline_ssim = " << summary.baseline_ssim << '\n';
  out << rows.str();
  if (!out) throw IoError(manifest.string(), "write failed");
  return summary;
}

}  // namespace ldrps::degrade
