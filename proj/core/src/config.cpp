#include "ocra/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <tuple>

#include "ocra/error.hpp"

namespace ocra {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <typename N>
N parse_number(const std::string& key, const std::string& text) {
  N value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("invalid value '" + text + "' for " + key);
  }
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "TRUE" || text == "1") return true;
  if (text == "false" || text == "FALSE" || text == "0") return false;
  throw ConfigError("invalid boolean '" + text + "' for " + key);
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

struct Field {
  const char* key;
  bool architecture;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define OCRA_INT_FIELD(name, arch)                                                       \
  Field{#name, arch, [](const RunConfig& c) { return std::to_string(c.name); },          \
        [](RunConfig& c, const std::string& v) { c.name = parse_number<int>(#name, v); }}
#define OCRA_U64_FIELD(name, arch)                                                       \
  Field{#name, arch, [](const RunConfig& c) { return std::to_string(c.name); },          \
        [](RunConfig& c, const std::string& v) { c.name = parse_number<uint64_t>(#name, v); }}
#define OCRA_DOUBLE_FIELD(name, arch)                                                    \
  Field{#name, arch, [](const RunConfig& c) { return format_double(c.name); },           \
        [](RunConfig& c, const std::string& v) { c.name = parse_number<double>(#name, v); }}
#define OCRA_BOOL_FIELD(name, arch)                                                      \
  Field{#name, arch, [](const RunConfig& c) { return std::string(c.name ? "true" : "false"); }, \
        [](RunConfig& c, const std::string& v) { c.name = parse_bool(#name, v); }}
#define OCRA_STRING_FIELD(name, arch)                                                    \
  Field{#name, arch, [](const RunConfig& c) { return c.name; },                          \
        [](RunConfig& c, const std::string& v) { c.name = v; }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      OCRA_STRING_FIELD(variant, true),
      OCRA_INT_FIELD(timesteps, true),
      OCRA_INT_FIELD(epochs, false),
      OCRA_DOUBLE_FIELD(lr, false),
      OCRA_INT_FIELD(batch_size, false),
      OCRA_INT_FIELD(read_glimpse_size, true),
      OCRA_INT_FIELD(write_glimpse_size, true),
      OCRA_INT_FIELD(conv1_filters, true),
      OCRA_INT_FIELD(conv2_filters, true),
      OCRA_INT_FIELD(lstm_size, true),
      OCRA_INT_FIELD(primary_capsules, true),
      OCRA_INT_FIELD(primary_capsule_dim, true),
      OCRA_INT_FIELD(routings, true),
      OCRA_INT_FIELD(object_capsule_dim, true),
      OCRA_INT_FIELD(background_capsules, true),
      OCRA_DOUBLE_FIELD(recon_loss_weight, false),
      OCRA_BOOL_FIELD(clip_canvas, false),
      OCRA_BOOL_FIELD(use_recon_mask, false),
      OCRA_INT_FIELD(image_width, true),
      OCRA_INT_FIELD(image_height, true),
      OCRA_INT_FIELD(num_classes, true),
      OCRA_INT_FIELD(sequence_slots, true),
      OCRA_INT_FIELD(objects_per_image, false),
      OCRA_DOUBLE_FIELD(margin, false),
      OCRA_DOUBLE_FIELD(lambda_absent, false),
      OCRA_STRING_FIELD(winner_by, true),
      OCRA_STRING_FIELD(routing_gradient, false),
      OCRA_DOUBLE_FIELD(forget_bias, false),
      OCRA_DOUBLE_FIELD(w_ij_init, false),
      OCRA_U64_FIELD(seed, false),
      OCRA_DOUBLE_FIELD(val_fraction, false),
      OCRA_INT_FIELD(patience, false),
  };
  return table;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

constexpr uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr uint64_t kFnvPrime = 0x100000001b3ULL;

uint64_t fnv1a(uint64_t h, const std::string& s) {
  for (unsigned char ch : s) {
    h ^= ch;
    h *= kFnvPrime;
  }
  return h;
}

}  // namespace

Variant RunConfig::variant_kind() const {
  if (variant == "ocra") return Variant::kOcra;
  if (variant == "recurrent_no_glimpse") return Variant::kRecurrentNoGlimpse;
  if (variant == "feedforward") return Variant::kFeedforward;
  if (variant == "no_capsule") return Variant::kNoCapsule;
  throw ConfigError("unknown variant '" + variant +
                    "' (expected ocra, recurrent_no_glimpse, feedforward, no_capsule)");
}

WinnerBy RunConfig::winner_kind() const {
  if (winner_by == "current") return WinnerBy::kCurrent;
  if (winner_by == "cumulative") return WinnerBy::kCumulative;
  throw ConfigError("winner_by must be current or cumulative, got '" + winner_by + "'");
}

void RunConfig::validate() const {
  const Variant v = variant_kind();
  winner_kind();
  require(routing_gradient == "detached" || routing_gradient == "full",
          "routing_gradient must be detached or full, got '" + routing_gradient + "'");
  require(timesteps >= 1, "timesteps must be >= 1");
  require(v != Variant::kFeedforward || timesteps == 1, "the feedforward variant uses one step");
  require(epochs >= 0, "epochs must be >= 0");
  require(lr > 0, "lr must be positive");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(read_glimpse_size >= 2 && write_glimpse_size >= 2, "glimpse sizes must be >= 2");
  require(conv1_filters >= 1 && conv2_filters >= 1, "conv filter counts must be >= 1");
  require(lstm_size >= 1, "lstm_size must be >= 1");
  require(primary_capsules >= 1 && primary_capsule_dim >= 1, "primary capsules must be >= 1");
  require(routings >= 1, "routings must be >= 1");
  require(object_capsule_dim >= 1, "object_capsule_dim must be >= 1");
  require(background_capsules == 0 || background_capsules == 1,
          "background_capsules must be 0 or 1");
  require(recon_loss_weight >= 0, "recon_loss_weight must be >= 0");
  require(image_width >= 4 && image_height >= 4, "image dimensions must be >= 4");
  require(num_classes >= 2, "num_classes must be >= 2");
  require(sequence_slots >= 0, "sequence_slots must be >= 0");
  if (sequence_slots > 0) {
    require(timesteps == 2 * sequence_slots + 2,
            "a sequence readout over " + std::to_string(sequence_slots) + " positions needs " +
                std::to_string(2 * sequence_slots + 2) + " timesteps, got " +
                std::to_string(timesteps));
  }
  require(objects_per_image >= 1 && objects_per_image <= num_classes,
          "objects_per_image out of range");
  require(margin >= 0 && margin < 1, "margin must be in [0,1)");
  require(lambda_absent >= 0, "lambda_absent must be >= 0");
  require(val_fraction >= 0 && val_fraction < 1, "val_fraction must be in [0,1)");
  require(patience >= 0, "patience must be >= 0");
}

std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& config) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(f.key, f.get(config));
  return out;
}

void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (key == f.key) {
      f.set(config, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void apply_overrides(RunConfig& config, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + o + "' is not key=value");
    set_config_value(config, trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
  }
}

RunConfig parse_config(const std::string& text) {
  RunConfig config;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    }
    try {
      set_config_value(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return config;
}

RunConfig load_config(const std::string& path) {
  if (const auto names = preset_names(); std::find(names.begin(), names.end(), path) != names.end()) {
    return preset(path);
  }
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const RunConfig& config) {
  std::string out;
  for (const auto& [k, v] : config_entries(config)) out += k + " = " + v + "\n";
  return out;
}

void save_config(const RunConfig& config, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config " + path);
  out << format_config(config);
  if (!out) throw IoError("error writing config " + path);
}

std::vector<std::string> preset_names() {
  return {"multimnist-3glimpse", "multimnist-10glimpse", "cluttered-5glimpse",
          "cluttered-7glimpse",  "svhn",                 "single-3glimpse"};
}

RunConfig preset(const std::string& name) {
  RunConfig c;
  if (name == "multimnist-3glimpse") {
    c.timesteps = 3;
    c.recon_loss_weight = 3;
  } else if (name == "multimnist-10glimpse") {
    c.timesteps = 10;
    c.recon_loss_weight = 10;
  } else if (name == "cluttered-5glimpse" || name == "cluttered-7glimpse") {
    const bool seven = name == "cluttered-7glimpse";
    c.timesteps = seven ? 7 : 5;
    c.epochs = 1000;
    c.background_capsules = 1;
    c.recon_loss_weight = seven ? 200 : 175;
    c.clip_canvas = false;
    c.use_recon_mask = true;
    c.image_width = c.image_height = 100;
  } else if (name == "svhn") {
    c.timesteps = 12;
    c.epochs = 1000;
    c.conv1_filters = c.conv2_filters = 64;
    c.recon_loss_weight = 200;
    c.image_width = c.image_height = 54;
    c.sequence_slots = 5;
    c.objects_per_image = 1;
  } else if (name == "single-3glimpse") {
    c.timesteps = 3;
    c.recon_loss_weight = 3;
    c.objects_per_image = 1;
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  return c;
}

uint64_t config_hash(const RunConfig& config) {
  uint64_t h = kFnvOffset;
  for (const auto& f : fields()) {
    if (!f.architecture) continue;
    h = fnv1a(h, f.key);
    h = fnv1a(h, "=");
    h = fnv1a(h, f.get(config));
    h = fnv1a(h, ";");
  }
  return h;
}

uint64_t geometry_hash(int width, int height, int classes, int sequence_slots) {
  std::string s = "w=" + std::to_string(width) + ";h=" + std::to_string(height) +
                  ";classes=" + std::to_string(classes) +
                  ";slots=" + std::to_string(sequence_slots);
  return fnv1a(kFnvOffset, s);
}

uint64_t geometry_hash(const RunConfig& config) {
  return geometry_hash(config.image_width, config.image_height, config.num_classes,
                       config.sequence_slots);
}

std::vector<std::tuple<std::string, std::string, std::string>> config_diff(const RunConfig& a,
                                                                           const RunConfig& b) {
  std::vector<std::tuple<std::string, std::string, std::string>> out;
  for (const auto& f : fields()) {
    auto va = f.get(a), vb = f.get(b);
    if (va != vb) out.emplace_back(f.key, va, vb);
  }
  return out;
}

std::string hex64(uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

}  // namespace ocra
