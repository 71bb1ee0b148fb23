#include "protoosr/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "protoosr/random.hpp"

namespace protoosr {

std::string to_string(DataFormat f) {
  switch (f) {
    case DataFormat::kIdx: return "idx";
    case DataFormat::kCifar10: return "cifar10";
    case DataFormat::kCifar100: return "cifar100";
  }
  return "?";
}

DataFormat parse_data_format(const std::string& s) {
  if (s == "idx") return DataFormat::kIdx;
  if (s == "cifar10") return DataFormat::kCifar10;
  if (s == "cifar100") return DataFormat::kCifar100;
  throw ConfigError("unknown data format '" + s + "' (expected idx, cifar10 or cifar100)");
}

std::string to_string(PrototypeInit p) { return p == PrototypeInit::kGaussian ? "gaussian" : "uniform"; }

PrototypeInit parse_prototype_init(const std::string& s) {
  if (s == "gaussian") return PrototypeInit::kGaussian;
  if (s == "uniform") return PrototypeInit::kUniform;
  throw ConfigError("unknown prototype init '" + s + "' (expected gaussian or uniform)");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// shortest text that parses back to the same double
std::string fmt(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

double to_double(const std::string& s) {
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || end != s.data() + s.size()) throw ConfigError("not a number: '" + s + "'");
  return v;
}

std::uint64_t to_u64(const std::string& s) {
  std::uint64_t v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc{} || end != s.data() + s.size()) {
    throw ConfigError("not a non-negative integer: '" + s + "'");
  }
  return v;
}

bool to_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("not a boolean: '" + s + "'");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(trim(item));
  return out;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

std::vector<std::size_t> to_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(s)) out.push_back(to_u64(item));
  return out;
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::vector<std::string> items;
  for (auto x : v) items.push_back(std::to_string(x));
  return join(items);
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define PROTOOSR_FIELD(key, member, to_text_expr, from_text_expr)                        \
  Field {                                                                                \
    key, [](const RunConfig& c) { const auto& v = c.member; return to_text_expr; },     \
        [](RunConfig& c, const std::string& s) { c.member = from_text_expr; }            \
  }
#define NUM(key, member) PROTOOSR_FIELD(key, member, fmt(v), to_double(s))
#define SIZE(key, member) PROTOOSR_FIELD(key, member, std::to_string(v), to_u64(s))
#define STR(key, member) PROTOOSR_FIELD(key, member, std::string(v), s)
#define FLAG(key, member) PROTOOSR_FIELD(key, member, std::string(v ? "true" : "false"), to_bool(s))
#define LIST(key, member) PROTOOSR_FIELD(key, member, join(v), split_list(s))

const std::vector<Field>& registry() {
  static const std::vector<Field> fields = {
      PROTOOSR_FIELD("data.format", data.format, to_string(v), parse_data_format(s)),
      STR("data.name", data.name),
      STR("data.train_images", data.train_images),
      STR("data.train_labels", data.train_labels),
      STR("data.test_images", data.test_images),
      STR("data.test_labels", data.test_labels),
      LIST("data.train_files", data.train_files),
      LIST("data.test_files", data.test_files),
      PROTOOSR_FIELD("data.unknown_format", data.unknown_format, to_string(v), parse_data_format(s)),
      STR("data.unknown_name", data.unknown_name),
      LIST("data.unknown_test_files", data.unknown_test_files),
      SIZE("data.train_limit", data.train_limit),
      SIZE("data.test_limit", data.test_limit),

      PROTOOSR_FIELD("split.style", split.style, to_string(v), parse_split_style(s)),
      SIZE("split.n_known", split.n_known),
      SIZE("split.n_unknown", split.n_unknown),
      SIZE("split.trial_seed", split.trial_seed),

      SIZE("outlier.noise_samples", outlier.noise_samples),
      FLAG("outlier.mnist_noise", outlier.mnist_noise),

      SIZE("encoder.channels", encoder.channels),
      SIZE("encoder.height", encoder.height),
      SIZE("encoder.width", encoder.width),
      PROTOOSR_FIELD("encoder.stages", encoder.stages, join_sizes(v), to_sizes(s)),
      SIZE("encoder.embedding_dim", encoder.embedding_dim),
      NUM("encoder.slope_init", encoder.slope_init),
      FLAG("encoder.batch_norm", encoder.batch_norm),
      NUM("encoder.bn_momentum", encoder.bn_momentum),

      PROTOOSR_FIELD("prototypes.init", prototypes.init, to_string(v), parse_prototype_init(s)),
      NUM("prototypes.scale", prototypes.scale),

      PROTOOSR_FIELD("loss.variant", loss.variant, to_string(v), parse_loss_variant(s)),
      NUM("loss.lambda", loss.lambda),
      PROTOOSR_FIELD("loss.distance_in_logits", loss.distance_in_logits, to_string(v), parse_distance_mode(s)),
      NUM("loss.slc_weight", loss.slc_weight),
      FLAG("loss.centroid_gradient", loss.centroid_gradient),

      NUM("optim.momentum", optim.momentum),
      NUM("optim.weight_decay", optim.weight_decay),
      SIZE("optim.batch_size", optim.batch_size),
      NUM("optim.clip_norm", optim.clip_norm),
      NUM("optim.initial_lr", optim.schedule.initial_lr),
      NUM("optim.decay_factor", optim.schedule.decay_factor),
      SIZE("optim.step_every", optim.schedule.step_every),
      SIZE("optim.total_epochs", optim.schedule.total_epochs),

      NUM("eval.percentile", eval.percentile),
      SIZE("eval.histogram_bins", eval.histogram_bins),
      SIZE("eval.validate_every", eval.validate_every),
      PROTOOSR_FIELD("eval.sweep_unknown_counts", eval.sweep_unknown_counts, join_sizes(v), to_sizes(s)),

      SIZE("run.seed", seed),
      STR("run.output_dir", output_dir),
  };
  return fields;
}

#undef LIST
#undef FLAG
#undef STR
#undef SIZE
#undef NUM
#undef PROTOOSR_FIELD

const Field& find_field(const std::string& key) {
  for (const auto& f : registry())
    if (f.key == key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

std::uint64_t RunConfig::stream_seed(const char* stream) const { return derive_seed(seed, stream); }

void RunConfig::validate() const {
  try {
    encoder.validate();
    loss.validate();
    optim.schedule.validate();
  } catch (const UsageError& e) {
    throw ConfigError(e.what());
  } catch (const DimensionError& e) {
    throw ConfigError(e.what());
  }
  if (optim.batch_size == 0) throw ConfigError("optim.batch_size must be at least 1");
  if (!(optim.momentum >= 0.0 && optim.momentum < 1.0)) throw ConfigError("optim.momentum must lie in [0, 1)");
  if (!(optim.weight_decay >= 0.0)) throw ConfigError("optim.weight_decay must be non-negative");
  if (!(optim.clip_norm >= 0.0)) throw ConfigError("optim.clip_norm must be non-negative");
  if (!(prototypes.scale > 0.0)) throw ConfigError("prototypes.scale must be positive");
  if (!(eval.percentile > 0.0 && eval.percentile < 100.0)) {
    throw ConfigError("eval.percentile must lie strictly between 0 and 100");
  }
  if (eval.histogram_bins == 0) throw ConfigError("eval.histogram_bins must be at least 1");
  if (split.n_known < 2) throw ConfigError("split.n_known must be at least 2");
  if (data.format != DataFormat::kIdx && data.train_files.empty()) {
    throw ConfigError("data.train_files is required for CIFAR data");
  }
}

void set_value(RunConfig& config, const std::string& key, const std::string& value) {
  const auto& field = find_field(key);
  try {
    field.set(config, value);
  } catch (const ConfigError& e) {
    throw ConfigError(key + ": " + e.what());
  } catch (const UsageError& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

std::string get_value(const RunConfig& config, const std::string& key) { return find_field(key).get(config); }

void apply_override(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form key=value");
  set_value(config, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

RunConfig parse_config(const std::string& text) {
  RunConfig config;
  std::istringstream in(text);
  std::string line, section;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto where = " (line " + std::to_string(line_no) + ")";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("malformed section header '" + line + "'" + where);
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key = value, got '" + line + "'" + where);
    const auto name = trim(line.substr(0, eq));
    const auto key = section.empty() ? name : section + "." + name;
    if (!seen.insert(key).second) throw ConfigError("duplicate key '" + key + "'" + where);
    try {
      set_value(config, key, trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(e.what() + where);
    }
  }
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string to_text(const RunConfig& config) {
  std::string out, section;
  for (const auto& f : registry()) {
    const auto dot = f.key.find('.');
    const auto sec = f.key.substr(0, dot);
    if (sec != section) {
      out += (section.empty() ? "[" : "\n[") + sec + "]\n";
      section = sec;
    }
    out += f.key.substr(dot + 1) + " = " + f.get(config) + "\n";
  }
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : registry()) out.push_back(f.key);
  return out;
}

void apply_environment(RunConfig& config) {
  if (const char* dir = std::getenv(kOutputDirEnv); dir != nullptr && *dir != '\0') config.output_dir = dir;
}

}  // namespace protoosr
