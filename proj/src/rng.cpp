#include "ldrps/rng.hpp"

namespace ldrps {

std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a(std::string_view s, std::uint64_t seed) { return fnv1a(s.data(), s.size(), seed); }

std::uint64_t Rng::derive(std::uint64_t seed, std::string_view stream) {
  std::uint64_t h = fnv1a(&seed, sizeof seed);
  h = fnv1a(stream, h);
  // splitmix64 finaliser to spread nearby seeds
  h += 0x9e3779b97f4a7c15ULL;
  h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ULL;
  h = (h ^ (h >> 27)) * 0x94d049bb133111ebULL;
  return h ^ (h >> 31);
}

int Rng::index(int n) {
  std::uniform_int_distribution<int> d(0, n - 1);
  return d(engine_);
}

Tensor Rng::normal_tensor(Shape shape) {
  Tensor t(shape);
  for (auto& v : t.vec()) v = normal();
  return t;
}

}  // namespace ldrps
