#include "vmfnet/config_file.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <functional>
#include <sstream>

namespace vmfnet {

using ordered_json = nlohmann::ordered_json;

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
  if (iterations < 1) throw ConfigError("iterations must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0))
    throw ConfigError("labeled_fraction must be in (0, 1]");
  if (!(sigma > 0)) throw ConfigError("sigma must be > 0");
  if (kernels < 2) throw ConfigError("kernels must be >= 2");
  if (log_every < 1 || checkpoint_every < 1) throw ConfigError("reporting cadences must be >= 1");
  if (precision != "f32" && precision != "f64")
    throw ConfigError("precision must be f32 or f64");
  (void)vmf_norm_from_name(likelihood_norm);
  model_config().validate();
}

VmfNetConfig TrainConfig::model_config() const {
  VmfNetConfig mc;
  mc.encoder.depth = encoder_depth;
  mc.encoder.base_channels = encoder_base_channels;
  mc.encoder.feature_dim = encoder_feature_dim;
  mc.encoder.input_h = image_size;
  mc.encoder.input_w = image_size;
  mc.encoder.in_channels = image_channels;
  mc.num_classes = classes;
  mc.image_channels = image_channels;
  mc.num_kernels = kernels;
  mc.sigma = sigma;
  mc.norm = vmf_norm_from_name(likelihood_norm);
  mc.head_hidden = head_hidden;
  return mc;
}

std::map<std::string, std::string> read_kv_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config file: " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto strip = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    if (strip(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = strip(line.substr(0, eq));
    const std::string val = strip(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": empty key");
    kv[key] = val;
  }
  return kv;
}

namespace {

struct Field {
  const char* name;
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

double parse_double(const std::string& v, const char* key) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(std::string("invalid number for ") + key + ": '" + v + "'");
  }
}

long long parse_int(const std::string& v, const char* key) {
  try {
    std::size_t used = 0;
    const long long d = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(std::string("invalid integer for ") + key + ": '" + v + "'");
  }
}

std::uint64_t parse_u64(const std::string& v, const char* key) {
  try {
    std::size_t used = 0;
    const unsigned long long d = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(std::string("invalid integer for ") + key + ": '" + v + "'");
  }
}

bool parse_bool(const std::string& v, const char* key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(std::string("invalid boolean for ") + key + ": '" + v + "'");
}

std::string fmt_double(double d) {
  std::ostringstream os;
  os.precision(17);
  os << d;
  return os.str();
}

const std::vector<Field>& fields() {
#define NUM_FIELD(key, parse)                                                      \
  Field {                                                                          \
    #key, [](TrainConfig& c, const std::string& v) { c.key = parse(v, #key); },    \
        [](const TrainConfig& c) { return fmt_double(static_cast<double>(c.key)); } \
  }
#define INT_FIELD(key, type)                                                                     \
  Field {                                                                                        \
    #key, [](TrainConfig& c, const std::string& v) { c.key = static_cast<type>(parse_int(v, #key)); }, \
        [](const TrainConfig& c) { return std::to_string(c.key); }                              \
  }
#define BOOL_FIELD(key)                                                                  \
  Field {                                                                                \
    #key, [](TrainConfig& c, const std::string& v) { c.key = parse_bool(v, #key); },     \
        [](const TrainConfig& c) { return c.key ? std::string("true") : std::string("false"); } \
  }
#define STR_FIELD(key)                                                          \
  Field {                                                                       \
    #key, [](TrainConfig& c, const std::string& v) { c.key = v; },              \
        [](const TrainConfig& c) { return c.key; }                              \
  }
  static const std::vector<Field> v = {
      NUM_FIELD(learning_rate, parse_double),
      INT_FIELD(iterations, long long),
      INT_FIELD(batch_size, int),
      NUM_FIELD(lambda_dice, parse_double),
      NUM_FIELD(labeled_fraction, parse_double),
      Field{"seed", [](TrainConfig& c, const std::string& s) { c.seed = parse_u64(s, "seed"); },
            [](const TrainConfig& c) { return std::to_string(c.seed); }},
      NUM_FIELD(sigma, parse_double),
      INT_FIELD(kernels, int),
      STR_FIELD(likelihood_norm),
      INT_FIELD(encoder_depth, int),
      INT_FIELD(encoder_base_channels, int),
      INT_FIELD(encoder_feature_dim, int),
      INT_FIELD(image_size, int),
      INT_FIELD(image_channels, int),
      INT_FIELD(classes, int),
      INT_FIELD(head_hidden, int),
      BOOL_FIELD(use_rec_loss),
      BOOL_FIELD(use_vmf_loss),
      INT_FIELD(log_every, long long),
      INT_FIELD(checkpoint_every, long long),
      STR_FIELD(holdout),
      STR_FIELD(precision),
  };
#undef NUM_FIELD
#undef INT_FIELD
#undef BOOL_FIELD
#undef STR_FIELD
  return v;
}

}  // namespace

TrainConfig apply_kv(const TrainConfig& base, const std::map<std::string, std::string>& kv) {
  TrainConfig cfg = base;
  for (const auto& [key, value] : kv) {
    bool found = false;
    for (const auto& f : fields()) {
      if (key == f.name) {
        f.set(cfg, value);
        found = true;
        break;
      }
    }
    if (!found) throw ConfigError("unknown config key '" + key + "'");
  }
  return cfg;
}

TrainConfig load_train_config(const std::filesystem::path& path, const TrainConfig& base) {
  return apply_kv(base, read_kv_file(path));
}

std::string to_kv(const TrainConfig& cfg) {
  std::ostringstream os;
  for (const auto& f : fields()) os << f.name << " = " << f.get(cfg) << "\n";
  return os.str();
}

std::string to_json_string(const TrainConfig& cfg) {
  ordered_json j;
  for (const auto& f : fields()) j[f.name] = f.get(cfg);
  return j.dump();
}

TrainConfig train_config_from_json(const std::string& text) {
  const auto j = ordered_json::parse(text);
  std::map<std::string, std::string> kv;
  for (const auto& [k, v] : j.items()) kv[k] = v.get<std::string>();
  return apply_kv(TrainConfig{}, kv);
}

}  // namespace vmfnet
