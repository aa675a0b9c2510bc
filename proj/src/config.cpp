#include "ldrps/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include <toml.hpp>

#include "ldrps/errors.hpp"

namespace ldrps::config {
namespace {

enum class Type { real, integer, uint, boolean, text, list };

// One config key bound to a field; text is the interchange form for both TOML
// values and command-line overrides.
struct Field {
  std::string section, key;
  Type type;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
  std::string name() const { return section + "." + key; }
};

std::string fmt_real(double v) {
  std::ostringstream o;
  o << std::setprecision(17) << v;
  std::string s = o.str();
  if (s.find_first_of(".eEni") == std::string::npos) s += ".0";
  return s;
}

[[noreturn]] void bad_value(const std::string& name, const std::string& text, const char* want) {
  throw ConfigError(name + ": expected " + want + ", got '" + text + "'");
}

template <typename T>
T parse_number(const std::string& name, const std::string& text, const char* want) {
  T v{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) bad_value(name, text, want);
  return v;
}

Field real(const char* sec, const char* key, double& f) {
  const std::string name = std::string(sec) + "." + key;
  return {sec, key, Type::real, [&f, name](const std::string& t) { f = parse_number<double>(name, t, "a number"); },
          [&f] { return fmt_real(f); }};
}
Field integer(const char* sec, const char* key, int& f) {
  const std::string name = std::string(sec) + "." + key;
  return {sec, key, Type::integer, [&f, name](const std::string& t) { f = parse_number<int>(name, t, "an integer"); },
          [&f] { return std::to_string(f); }};
}
Field uint(const char* sec, const char* key, std::uint64_t& f) {
  const std::string name = std::string(sec) + "." + key;
  return {sec, key, Type::uint,
          [&f, name](const std::string& t) {
            // TOML integers are signed 64-bit
            const auto v = parse_number<std::uint64_t>(name, t, "a non-negative integer");
            if (v > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max())) {
              bad_value(name, t, "an integer below 2^63");
            }
            f = v;
          },
          [&f] { return std::to_string(f); }};
}
Field boolean(const char* sec, const char* key, bool& f) {
  const std::string name = std::string(sec) + "." + key;
  return {sec, key, Type::boolean,
          [&f, name](const std::string& t) {
            if (t == "true") f = true;
            else if (t == "false") f = false;
            else bad_value(name, t, "true or false");
          },
          [&f] { return std::string(f ? "true" : "false"); }};
}
Field text(const char* sec, const char* key, std::string& f) {
  return {sec, key, Type::text, [&f](const std::string& t) { f = t; }, [&f] { return f; }};
}
Field choice(const char* sec, const char* key, std::function<void(const std::string&)> set,
             std::function<std::string()> get) {
  return {sec, key, Type::text, std::move(set), std::move(get)};
}

std::vector<Field> fields(Config& c) {
  auto& m = c.models;
  auto& g = c.guidance;
  auto& s = c.sampler;
  auto& d = c.degrade;
  return {
      integer("schedule", "T", c.schedule.T),
      real("schedule", "beta_start", c.schedule.beta_start),
      real("schedule", "beta_end", c.schedule.beta_end),

      uint("models", "seed", m.seed),
      integer("models", "image_size", m.image_size),
      text("models", "dataset_dir", m.dataset_dir),
      integer("models", "dataset_count", m.dataset_count),
      text("models", "checkpoint_dir", m.checkpoint_dir),
      integer("models", "ae_epochs", m.ae.epochs),
      integer("models", "ae_batch", m.ae.batch),
      real("models", "ae_lr", m.ae.lr),
      real("models", "ae_latent_l2", m.ae.latent_l2),
      real("models", "ae_latent_noise", m.ae.latent_noise),
      integer("models", "denoiser_steps", m.denoiser.steps),
      integer("models", "denoiser_batch", m.denoiser.batch),
      real("models", "denoiser_lr", m.denoiser.lr),
      real("models", "denoiser_ema", m.denoiser.ema_decay),
      real("models", "cond_dropout", m.denoiser.cond_dropout),
      choice(
          "models", "perceptual",
          [&m](const std::string& t) {
            if (t != "random" && t != "identity") bad_value("models.perceptual", t, "'random' or 'identity'");
            m.perceptual = t;
          },
          [&m] { return m.perceptual; }),
      uint("models", "perceptual_seed", m.perceptual_seed),

      real("fpam", "lambda1", c.fpam.lambda1),
      real("fpam", "lambda2", c.fpam.lambda2),
      real("fpam", "lambda3", c.fpam.lambda3),
      real("fpam", "lr", c.fpam.lr),
      real("fpam", "d1_lr", c.fpam.d1_lr),
      real("fpam", "guided_lr_scale", c.fpam.guided_lr_scale),

      real("guidance", "w1", g.w1),
      real("guidance", "w2", g.w2),
      real("guidance", "w3", g.w3),
      real("guidance", "w4", g.w4),
      real("guidance", "w5", g.w5),
      real("guidance", "delta", g.delta),
      real("guidance", "stage1_frac", g.stage1_frac),
      real("guidance", "quality_frac", g.quality_frac),
      real("guidance", "e", g.e),
      integer("guidance", "K", g.K),
      real("guidance", "s", g.s),
      boolean("guidance", "detach_eps", g.detach_eps),
      boolean("guidance", "clip", g.clip),
      real("guidance", "clip_factor", g.clip_factor),

      integer("sampler", "steps", s.cfg.steps),
      choice(
          "sampler", "variance",
          [&s](const std::string& t) {
            if (t == "posterior") s.cfg.variance = sampler::Variance::posterior;
            else if (t == "delta") s.cfg.variance = sampler::Variance::delta;
            else if (t == "zero") s.cfg.variance = sampler::Variance::zero;
            else bad_value("sampler.variance", t, "'posterior', 'delta' or 'zero'");
          },
          [&s] {
            switch (s.cfg.variance) {
              case sampler::Variance::delta: return std::string("delta");
              case sampler::Variance::zero: return std::string("zero");
              default: return std::string("posterior");
            }
          }),
      integer("sampler", "recurrences", s.cfg.recurrence.n),
      real("sampler", "gamma", s.cfg.recurrence.gamma),
      real("sampler", "d2_lr", s.cfg.d2_lr),
      uint("sampler", "seed", s.seed),
      integer("sampler", "token", s.token),
      boolean("sampler", "token_from_manifest", s.token_from_manifest),

      choice(
          "degrade", "kind", [&d](const std::string& t) { d.spec.kind = degrade::parse_kind(t); },
          [&d] { return std::string(degrade::kind_name(d.spec.kind)); }),
      real("degrade", "sigma", d.spec.sigma),
      real("degrade", "gamma_exp", d.spec.gamma_exp),
      real("degrade", "gain", d.spec.gain),
      real("degrade", "transmission", d.spec.transmission),
      real("degrade", "airlight", d.spec.airlight),
      {"degrade", "children", Type::list,
       [&d](const std::string& t) {
         d.children.clear();
         std::stringstream ss(t);
         std::string item;
         while (std::getline(ss, item, ',')) {
           if (item.empty()) continue;
           degrade::parse_kind(item);
           d.children.push_back(item);
         }
       },
       [&d] {
         std::string out;
         for (const auto& k : d.children) out += (out.empty() ? "" : ",") + k;
         return out;
       }},
      uint("degrade", "seed", d.spec.seed),
      integer("degrade", "count", d.count),
  };
}

Field* find(std::vector<Field>& fs, const std::string& section, const std::string& key) {
  for (auto& f : fs)
    if (f.section == section && f.key == key) return &f;
  return nullptr;
}

std::string node_text(const toml::node& n, const Field& f) {
  const std::string name = f.name();
  switch (f.type) {
    case Type::real:
      if (auto v = n.value_exact<double>()) return fmt_real(*v);
      if (auto v = n.value_exact<std::int64_t>()) return std::to_string(*v);
      break;
    case Type::integer:
    case Type::uint:
      if (auto v = n.value_exact<std::int64_t>()) return std::to_string(*v);
      break;
    case Type::boolean:
      if (auto v = n.value_exact<bool>()) return *v ? "true" : "false";
      break;
    case Type::text:
      if (auto v = n.value_exact<std::string>()) return *v;
      break;
    case Type::list:
      if (const auto* arr = n.as_array()) {
        std::string out;
        for (const auto& e : *arr) {
          auto v = e.value_exact<std::string>();
          if (!v) throw ConfigError(name + ": expected an array of strings");
          out += (out.empty() ? "" : ",") + *v;
        }
        return out;
      }
      break;
  }
  throw ConfigError(name + ": value has the wrong type");
}

// TOML basic string
std::string quoted(const std::string& v) {
  std::string out = "\"";
  for (char ch : v) {
    if (ch == '"' || ch == '\\') out += '\\';
    out += ch;
  }
  return out + "\"";
}

}  // namespace

Config parse(const std::string& toml_text, const std::string& origin) {
  toml::table root;
  try {
    root = toml::parse(toml_text, origin);
  } catch (const toml::parse_error& e) {
    std::ostringstream o;
    o << origin << ": " << e.description() << " (line " << e.source().begin.line << ")";
    throw ConfigError(o.str());
  }
  Config c;
  auto fs = fields(c);
  for (const auto& [sec_key, sec_node] : root) {
    const std::string section(sec_key.str());
    const auto* table = sec_node.as_table();
    if (!table) throw ConfigError("unknown top-level key '" + section + "' (expected a section)");
    bool known_section = false;
    for (const auto& f : fs) known_section |= f.section == section;
    if (!known_section) throw ConfigError("unknown config section [" + section + "]");
    for (const auto& [k, v] : *table) {
      const std::string key(k.str());
      Field* f = find(fs, section, key);
      if (!f) throw ConfigError("unknown config key " + section + "." + key);
      f->set(node_text(v, *f));
    }
  }
  return c;
}

Config load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot read config");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

void apply_override(Config& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    throw ConfigError("override '" + assignment + "' must look like section.key=value");
  }
  const std::string section = assignment.substr(0, dot);
  const std::string key = assignment.substr(dot + 1, eq - dot - 1);
  auto fs = fields(cfg);
  Field* f = find(fs, section, key);
  if (!f) throw ConfigError("unknown config key " + section + "." + key);
  f->set(assignment.substr(eq + 1));
}

std::string to_toml(const Config& cfg) {
  Config copy = cfg;
  auto fs = fields(copy);
  std::ostringstream o;
  std::string current;
  for (const auto& f : fs) {
    if (f.section != current) {
      o << (current.empty() ? "" : "\n") << "[" << f.section << "]\n";
      current = f.section;
    }
    o << f.key << " = ";
    const std::string v = f.get();
    if (f.type == Type::text) {
      o << quoted(v);
    } else if (f.type == Type::list) {
      std::stringstream ss(v);
      std::string item;
      o << '[';
      for (bool first = true; std::getline(ss, item, ','); first = false) o << (first ? "" : ", ") << quoted(item);
      o << ']';
    } else {
      o << v;
    }
    o << '\n';
  }
  return o.str();
}

nlohmann::json to_json(const Config& cfg) {
  Config copy = cfg;
  nlohmann::json j = nlohmann::json::object();
  for (const auto& f : fields(copy)) {
    const std::string v = f.get();
    auto& slot = j[f.section][f.key];
    switch (f.type) {
      case Type::real: slot = std::stod(v); break;
      case Type::integer: slot = std::stoll(v); break;
      case Type::uint: slot = std::stoull(v); break;
      case Type::boolean: slot = v == "true"; break;
      case Type::text: slot = v; break;
      case Type::list: {
        slot = nlohmann::json::array();
        std::stringstream ss(v);
        std::string item;
        while (std::getline(ss, item, ',')) slot.push_back(item);
        break;
      }
    }
  }
  return j;
}

std::vector<std::string> known_keys() {
  Config c;
  std::vector<std::string> out;
  for (const auto& f : fields(c)) out.push_back(f.name());
  return out;
}

sampler::RestoreConfig Config::restore_config() const {
  sampler::RestoreConfig r;
  r.sampler = sampler.cfg;
  r.guidance = guidance;
  r.fpam = fpam;
  return r;
}

degrade::DegradationSpec Config::degradation() const {
  degrade::DegradationSpec s = degrade.spec;
  if (s.kind == degrade::Kind::composite) {
    s.children.clear();
    for (const auto& k : degrade.children) {
      degrade::DegradationSpec child = degrade.spec;
      child.kind = degrade::parse_kind(k);
      if (child.kind == degrade::Kind::composite) throw ConfigError("degrade.children cannot nest composite");
      s.children.push_back(child);
    }
  }
  s.validate();
  return s;
}

}  // namespace ldrps::config
