#include "volcnn/run_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace volcnn {

namespace {

std::string fmt_double(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::string fmt_bool(bool v) { return v ? "true" : "false"; }

template <typename I>
I parse_integer(std::string_view key, std::string_view v) {
  I out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("invalid integer for " + std::string(key) + ": '" + std::string(v) + "'");
  }
  return out;
}

double parse_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("invalid number for " + std::string(key) + ": '" + std::string(v) + "'");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("invalid boolean for " + std::string(key) + ": '" + std::string(v) + "'");
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

#define KEY_INT(NAME, FIELD, HELP, MODEL)                                             \
  ConfigKey{NAME, HELP, MODEL, [](const RunConfig& c) { return std::to_string(c.FIELD); }, \
            [](RunConfig& c, std::string_view v) { c.FIELD = parse_integer<decltype(c.FIELD)>(NAME, v); }}
#define KEY_DOUBLE(NAME, FIELD, HELP)                                                   \
  ConfigKey{NAME, HELP, false, [](const RunConfig& c) { return fmt_double(c.FIELD); }, \
            [](RunConfig& c, std::string_view v) { c.FIELD = parse_double(NAME, v); }}
#define KEY_BOOL(NAME, FIELD, HELP, MODEL)                                           \
  ConfigKey{NAME, HELP, MODEL, [](const RunConfig& c) { return fmt_bool(c.FIELD); }, \
            [](RunConfig& c, std::string_view v) { c.FIELD = parse_bool(NAME, v); }}
#define KEY_STRING(NAME, FIELD, HELP)                                     \
  ConfigKey{NAME, HELP, false, [](const RunConfig& c) { return c.FIELD; }, \
            [](RunConfig& c, std::string_view v) { c.FIELD = std::string(v); }}

std::vector<ConfigKey> make_keys() {
  return {
      KEY_INT("widening_factor", model.widening_factor, "channel multiplier f", true),
      ConfigKey{"norm", "Instance | Batch", true,
                [](const RunConfig& c) { return std::string(to_string(c.model.norm)); },
                [](RunConfig& c, std::string_view v) { c.model.norm = parse_norm_kind(v); }},
      ConfigKey{"first_layer", "K1S1 | K3S2 | K7S4", true,
                [](const RunConfig& c) { return std::string(to_string(c.model.first_layer)); },
                [](RunConfig& c, std::string_view v) { c.model.first_layer = parse_first_layer(v); }},
      KEY_INT("extra_blocks", model.extra_blocks, "added conv/IN/ReLU blocks", true),
      ConfigKey{"age_mode", "None | Encoded | ConcatBaseline", true,
                [](const RunConfig& c) { return std::string(to_string(c.model.age_mode)); },
                [](RunConfig& c, std::string_view v) { c.model.age_mode = parse_age_mode(v); }},
      KEY_INT("crop_extent", model.crop_extent, "network input extent", true),
      KEY_INT("d_model", model.d_model, "age encoding width", true),
      KEY_BOOL("adapt_small_inputs", model.adapt_small_inputs, "shrink windows for small crops", true),
      KEY_DOUBLE("learning_rate", learning_rate, "SGD step size"),
      KEY_DOUBLE("momentum", momentum, "SGD momentum"),
      KEY_INT("batch_size", batch_size, "0 = 4 for Instance, 16 for Batch", false),
      KEY_INT("max_epochs", max_epochs, "training epochs", false),
      KEY_INT("seed", seed, "master seed", false),
      KEY_BOOL("class_weights", class_weights, "inverse-frequency loss weights", false),
      KEY_BOOL("zscore", zscore, "per-volume z-scoring", false),
      KEY_DOUBLE("max_blur_sigma", max_blur_sigma, "augmentation blur sigma upper bound"),
      KEY_BOOL("log_wall_time", log_wall_time, "record epoch seconds (false writes 0)", false),
      KEY_STRING("manifest", manifest, "manifest CSV"),
      KEY_STRING("split", split, "split to evaluate: train | val | test"),
      KEY_BOOL("allow_leakage", allow_leakage, "accept manifests with leaked subjects", false),
      KEY_DOUBLE("subsample_rate", subsample_rate, "fraction of train subjects kept"),
      KEY_STRING("out_dir", out_dir, "parent of per-run directories"),
      KEY_STRING("run_dir", run_dir, "explicit output directory"),
      KEY_STRING("checkpoint", checkpoint, "checkpoint to evaluate"),
      KEY_INT("n_resamples", n_resamples, "bootstrap resamples", false),
      KEY_DOUBLE("alpha", alpha, "bootstrap interval level"),
      KEY_STRING("views", views, "slices, e.g. axial50,coronal56 (empty = defaults)"),
      KEY_DOUBLE("smooth_sigma", smooth_sigma, "saliency smoothing sigma"),
      KEY_STRING("axis", axis, "ablation axis: width | depth | norm | first_layer | subsample"),
      KEY_STRING("values", values, "comma-separated ablation values"),
      KEY_STRING("scope", scope, "gradcheck scope: ops | model | all"),
      KEY_INT("n_per_class", n_per_class, "synthetic subjects per class", false),
      KEY_INT("extent", extent, "synthetic volume extent", false),
      KEY_DOUBLE("noise", noise, "synthetic noise level"),
      KEY_DOUBLE("val_fraction", val_fraction, "synthetic validation fraction per class"),
      KEY_DOUBLE("test_fraction", test_fraction, "synthetic test fraction per class"),
      KEY_INT("threads", threads, "worker threads", false),
  };
}

#undef KEY_INT
#undef KEY_DOUBLE
#undef KEY_BOOL
#undef KEY_STRING

}  // namespace

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.learning_rate = learning_rate;
  t.momentum = momentum;
  t.batch_size = batch_size;
  t.max_epochs = max_epochs;
  t.seed = seed;
  t.class_weights = class_weights;
  t.preprocess.zscore = zscore;
  t.preprocess.max_blur_sigma = max_blur_sigma;
  t.log_wall_time = log_wall_time;
  return t;
}

BootstrapOptions RunConfig::bootstrap_options() const {
  BootstrapOptions b;
  b.n_resamples = n_resamples;
  b.alpha = alpha;
  return b;
}

bool RunConfig::model_keys_explicit() const {
  for (const auto& k : config_keys()) {
    if (k.model && explicit_keys.contains(k.name)) return true;
  }
  return false;
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = make_keys();
  return keys;
}

const ConfigKey* find_config_key(std::string_view name) {
  for (const auto& k : config_keys()) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

void set_config_value(RunConfig& config, std::string_view key, std::string_view value) {
  const ConfigKey* k = find_config_key(key);
  if (!k) throw ConfigError("unknown config key '" + std::string(key) + "'");
  k->set(config, trim(value));
  config.explicit_keys.insert(k->name);
}

void apply_config_text(RunConfig& config, std::string_view text) {
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const std::size_t hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    set_config_value(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void apply_config_file(RunConfig& config, const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  apply_config_text(config, ss.str());
}

std::string run_config_to_text(const RunConfig& config) {
  std::string out;
  for (const auto& k : config_keys()) out += k.name + " = " + k.get(config) + "\n";
  return out;
}

}  // namespace volcnn
