#include "ldrps/models.hpp"

#include <cmath>
#include <string>

#include "ldrps/errors.hpp"

namespace ldrps::models {

using ad::Var;

Tensor timestep_embedding(const std::vector<int>& t, int dim) {
  const int half = dim / 2;
  Tensor out({static_cast<int>(t.size()), dim, 1, 1});
  for (std::size_t n = 0; n < t.size(); ++n) {
    double* row = out.sample(static_cast<int>(n));
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / half);
      row[i] = std::sin(t[n] * freq);
      row[half + i] = std::cos(t[n] * freq);
    }
  }
  return out;
}

// ---------------------------------------------------------------- autoencoder

Autoencoder::Autoencoder(std::uint64_t seed) {
  Rng rng(seed, "autoencoder");
  auto e = [&](int i, int cin, int cout, int stride) {
    enc_.emplace_back(params_, "enc" + std::to_string(i), cin, cout, 3, stride, rng);
  };
  e(0, 3, 32, 1);
  e(1, 32, 32, 2);
  e(2, 32, 64, 2);
  e(3, 64, 64, 1);
  e(4, 64, kLatentChannels, 1);
  auto d = [&](int i, int cin, int cout) { dec_.emplace_back(params_, "dec" + std::to_string(i), cin, cout, 3, 1, rng); };
  d(0, kLatentChannels, 64);
  d(1, 64, 64);
  d(2, 64, 32);  // after first upsample
  d(3, 32, 32);
  d(4, 32, 16);  // after second upsample
  d(5, 16, 3);
}

Var Autoencoder::encode(const Var& x) const {
  const Shape s = x.shape();
  if (s.c != 3 || s.h % kDownscale != 0 || s.w % kDownscale != 0) {
    throw UsageError("encode: expected (N,3,H,W) with H,W divisible by 4, got " + s.str());
  }
  Var h = x;
  for (std::size_t i = 0; i + 1 < enc_.size(); ++i) h = ad::silu(enc_[i](h));
  return ad::scale(enc_.back()(h), latent_scale);
}

Var Autoencoder::decode(const Var& z) const {
  if (z.shape().c != kLatentChannels) throw UsageError("decode: expected 4 latent channels, got " + z.shape().str());
  Var h = ad::scale(z, 1.0 / latent_scale);
  h = ad::silu(dec_[0](h));
  h = ad::silu(dec_[1](h));
  h = ad::silu(dec_[2](ad::upsample_nearest2x(h)));
  h = ad::silu(dec_[3](h));
  h = ad::silu(dec_[4](ad::upsample_nearest2x(h)));
  return ad::tanh(dec_[5](h));
}

// ------------------------------------------------------------------ denoiser

namespace {
constexpr int kTimeDim = 32;
constexpr int kEmbDim = 128;
constexpr int kBase = 32;
constexpr int kLow = 64;
}  // namespace

Denoiser::ResBlock Denoiser::block(const std::string& name, int cin, int cout, Rng& rng) {
  ResBlock b;
  b.conv1 = nn::Conv2d(params_, name + ".conv1", cin, cout, 3, 1, rng);
  // zero second conv: each block starts as its skip path
  b.conv2 = nn::Conv2d(params_, name + ".conv2", cout, cout, 3, 1, rng, 0.0);
  if (cin != cout) b.skip = nn::Conv2d(params_, name + ".skip", cin, cout, 1, 1, rng);
  b.emb = nn::Linear(params_, name + ".emb", kEmbDim, cout, rng, 0.5);
  return b;
}

Var Denoiser::ResBlock::operator()(const Var& x, const Var& emb_act) const {
  Var h = conv1(ad::silu(x));
  h = ad::add_spatial_broadcast(h, emb(emb_act));
  h = conv2(ad::silu(h));
  return ad::add(skip.weight ? skip(x) : x, h);
}

Denoiser::Denoiser(int classes, std::uint64_t seed) : classes_(classes) {
  if (classes < 1) throw ConfigError("denoiser needs at least one class");
  Rng rng(seed, "denoiser");
  time1_ = nn::Linear(params_, "time1", kTimeDim, kEmbDim, rng);
  time2_ = nn::Linear(params_, "time2", kEmbDim, kEmbDim, rng);
  Tensor table({classes + 1, kEmbDim, 1, 1});
  for (auto& v : table.vec()) v = rng.normal();
  class_table_ = params_.add("class_table", std::move(table));
  in_ = nn::Conv2d(params_, "in", kLatentChannels, kBase, 3, 1, rng);
  hi1_ = block("hi1", kBase, kBase, rng);
  down_ = nn::Conv2d(params_, "down", kBase, kLow, 3, 2, rng);
  lo1_ = block("lo1", kLow, kLow, rng);
  lo2_ = block("lo2", kLow, kLow, rng);
  up_ = nn::Conv2d(params_, "up", kLow, kBase, 3, 1, rng);
  hi2_ = block("hi2", 2 * kBase, kBase, rng);
  hi3_ = block("hi3", kBase, kBase, rng);
  out_ = nn::Conv2d(params_, "out", kBase, kLatentChannels, 3, 1, rng, 0.0);
}

int Denoiser::token_row(ConditioningToken c) const {
  if (c.is_null()) return classes_;
  if (c.id >= classes_) throw UsageError("conditioning token " + std::to_string(c.id) + " out of range");
  return c.id;
}

Var Denoiser::forward(const Var& z_t, const std::vector<int>& t, const std::vector<ConditioningToken>& c) const {
  const Shape s = z_t.shape();
  if (s.c != kLatentChannels || s.h % 2 != 0 || s.w % 2 != 0) {
    throw UsageError("denoiser: expected (N,4,h,w) with even h,w, got " + s.str());
  }
  if (t.size() != static_cast<std::size_t>(s.n) || c.size() != t.size()) {
    throw UsageError("denoiser: need one timestep and token per sample");
  }
  std::vector<int> rows;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] < 1 || t[i] > max_timestep) throw UsageError("denoiser: timestep " + std::to_string(t[i]) + " out of range");
    rows.push_back(token_row(c[i]));
  }
  Var temb = time2_(ad::silu(time1_(ad::constant(timestep_embedding(t, kTimeDim)))));
  const Var emb = ad::silu(ad::add(temb, ad::embedding(class_table_, rows)));

  const Var h0 = hi1_(in_(z_t), emb);
  Var l = lo1_(down_(h0), emb);
  l = lo2_(l, emb);
  Var h = up_(ad::upsample_nearest2x(l));
  h = hi2_(ad::concat_channels(h, h0), emb);
  h = hi3_(h, emb);
  return out_(ad::silu(h));
}

Tensor Denoiser::predict(const Tensor& z_t, int t, ConditioningToken c) const {
  const int n = z_t.shape().n;
  return forward(ad::constant(z_t), std::vector<int>(static_cast<std::size_t>(n), t),
                 std::vector<ConditioningToken>(static_cast<std::size_t>(n), c))
      .value();
}

// ---------------------------------------------------------------- perceptual

PerceptualExtractor::PerceptualExtractor(std::uint64_t seed) {
  Rng rng(seed, "perceptual");
  layers_.emplace_back(params_, "v0", 3, 16, 3, 1, rng);
  layers_.emplace_back(params_, "v1", 16, 32, 3, 2, rng);
  layers_.emplace_back(params_, "v2", 32, 64, 3, 2, rng);
}

PerceptualExtractor PerceptualExtractor::identity() { return PerceptualExtractor(); }

std::vector<Var> PerceptualExtractor::features(const Var& x) const {
  if (layers_.empty()) return {x};
  std::vector<Var> out;
  Var h = x;
  for (const auto& layer : layers_) {
    h = ad::silu(layer(h));
    out.push_back(h);
  }
  return out;
}

Var PerceptualExtractor::distance(const Var& a, const Var& b) const {
  const auto fa = features(a);
  const auto fb = features(b);
  Var total = ad::mse(fa[0], fb[0]);
  for (std::size_t i = 1; i < fa.size(); ++i) total = ad::add(total, ad::mse(fa[i], fb[i]));
  return fa.size() == 1 ? total : ad::scale(total, 1.0 / static_cast<double>(fa.size()));
}

// ------------------------------------------------------------- discriminator

Discriminator::Discriminator(std::uint64_t seed, double lr) {
  Rng rng(seed, "discriminator");
  convs_.emplace_back(params_, "d0", 3, 16, 3, 2, rng);
  convs_.emplace_back(params_, "d1", 16, 32, 3, 2, rng);
  convs_.emplace_back(params_, "d2", 32, 32, 3, 2, rng);
  head_ = nn::Conv2d(params_, "head", 32, 1, 3, 1, rng, 0.0);
  adam_ = nn::Adam(params_.vars(), lr);
}

Var Discriminator::operator()(const Var& x) const {
  if (x.shape().c != 3) throw UsageError("discriminator expects 3 channels, got " + x.shape().str());
  Var h = x;
  for (const auto& c : convs_) h = ad::silu(c(h));
  const Var logit = ad::spatial_mean(head_(h));
  return ad::clamp(ad::sigmoid(logit), kProbFloor, 1.0 - kProbFloor);
}

}  // namespace ldrps::models
