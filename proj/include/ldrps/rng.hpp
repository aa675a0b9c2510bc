#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "ldrps/tensor.hpp"

namespace ldrps {

/// 64-bit FNV-1a.
std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a(std::string_view s, std::uint64_t seed = 0xcbf29ce484222325ULL);

/// A named, independently seeded random stream. Streams derived from the same
/// root seed but different names never share draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t seed, std::string_view stream) : engine_(derive(seed, stream)) {}

  static std::uint64_t derive(std::uint64_t seed, std::string_view stream);

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform_(engine_); }
  /// Integer in [0, n).
  int index(int n);
  bool bernoulli(double p) { return uniform_(engine_) < p; }

  Tensor normal_tensor(Shape shape);
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace ldrps
