#include "ldrps/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include "ldrps/errors.hpp"
#include "ldrps/rng.hpp"

namespace ldrps {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

constexpr std::array<char, 6> kMagic{'L', 'D', 'R', 'P', 'S', '1'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

class Reader {
 public:
  Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw IoError(path.string(), "cannot open checkpoint");
    std::array<char, 6> magic{};
    in_.read(magic.data(), magic.size());
    if (!in_ || magic != kMagic) throw IoError(path.string(), "not an LDRPS1 checkpoint");
  }

  template <typename T>
  T get() {
    T v{};
    bytes(&v, sizeof v);
    return v;
  }
  void bytes(void* dst, std::size_t n) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (!in_) throw IoError(path_.string(), "truncated checkpoint");
  }
  nlohmann::json meta() {
    const auto len = get<std::uint32_t>();
    if (len > (1u << 24)) throw IoError(path_.string(), "metadata block too large");
    std::string text(len, '\0');
    bytes(text.data(), len);
    try {
      return nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path_.string(), std::string("bad metadata: ") + e.what());
    }
  }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::string& kind, nlohmann::json meta,
                     const nn::ParamStore& params) {
  meta["kind"] = kind;
  nlohmann::json shapes = nlohmann::json::object();
  for (const auto& [name, v] : params.entries()) {
    const Shape s = v.shape();
    shapes[name] = {s.n, s.c, s.h, s.w};
  }
  meta["shapes"] = shapes;
  const std::string text = meta.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError(tmp.string(), "cannot open for writing");
    out.write(kMagic.data(), kMagic.size());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(params.entries().size()));
    std::vector<float> buf;
    for (const auto& [name, v] : params.entries()) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      const Shape s = v.shape();
      for (int d : {s.n, s.c, s.h, s.w}) put<std::int32_t>(out, d);
      buf.assign(v.value().vec().begin(), v.value().vec().end());
      out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!out) throw IoError(tmp.string(), "write failed");
  }
  std::filesystem::rename(tmp, path);
}

nlohmann::json read_checkpoint_meta(const std::filesystem::path& path) { return Reader(path).meta(); }

nlohmann::json load_checkpoint(const std::filesystem::path& path, const std::string& expected_kind,
                               nn::ParamStore& params) {
  Reader r(path);
  nlohmann::json meta = r.meta();
  if (meta.value("kind", std::string()) != expected_kind) {
    throw IoError(path.string(), "expected a " + expected_kind + " checkpoint, found " + meta.value("kind", std::string("?")));
  }
  const auto count = r.get<std::uint32_t>();
  if (count != params.entries().size()) {
    throw IoError(path.string(), "parameter count " + std::to_string(count) + " does not match the model (" +
                                     std::to_string(params.entries().size()) + ")");
  }
  std::vector<float> buf;
  for (const auto& [name, v] : params.entries()) {
    const auto len = r.get<std::uint32_t>();
    if (len > 4096) throw IoError(path.string(), "corrupt tensor name");
    std::string got(len, '\0');
    r.bytes(got.data(), len);
    Shape s;
    s.n = r.get<std::int32_t>();
    s.c = r.get<std::int32_t>();
    s.h = r.get<std::int32_t>();
    s.w = r.get<std::int32_t>();
    if (got != name || !(s == v.shape())) {
      throw IoError(path.string(), "tensor " + got + " " + s.str() + " does not match model tensor " + name + " " +
                                       v.shape().str());
    }
    buf.resize(s.size());
    r.bytes(buf.data(), buf.size() * sizeof(float));
    auto& dst = v.node().value.vec();
    std::copy(buf.begin(), buf.end(), dst.begin());
  }
  return meta;
}

std::uint64_t file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open for hashing");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return fnv1a(bytes);
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace ldrps
