#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "volcnn/metrics.hpp"
#include "volcnn/model.hpp"
#include "volcnn/optim.hpp"

namespace volcnn {

/// Every setting of every command. Each field has a default, a text form and
/// a key; see config_keys().
struct RunConfig {
  ModelConfig model;

  double learning_rate = 0.01;
  double momentum = 0.9;
  int batch_size = 0;
  int max_epochs = 100;
  std::uint64_t seed = 0;
  bool class_weights = false;
  bool zscore = true;
  double max_blur_sigma = 1.5;
  bool log_wall_time = false;

  std::string manifest;
  std::string split = "test";
  bool allow_leakage = false;
  double subsample_rate = 1.0;

  std::string out_dir = "runs";
  std::string run_dir;  // empty: <out_dir>/<timestamp>-seed<seed>
  std::string checkpoint;

  int n_resamples = 1000;
  double alpha = 0.05;

  std::string views;  // empty: the four default views
  double smooth_sigma = 0.8;

  std::string axis;
  std::string values;

  std::string scope = "all";

  int n_per_class = 8;
  int extent = 32;
  double noise = 0.1;
  double val_fraction = 0.15;
  double test_fraction = 0.15;

  int threads = 1;

  /// Keys given in a config file or on the command line.
  std::set<std::string> explicit_keys;

  TrainConfig train_config() const;
  BootstrapOptions bootstrap_options() const;
  /// True when any model key was set explicitly.
  bool model_keys_explicit() const;
};

struct ConfigKey {
  std::string name;
  std::string help;
  bool model = false;  // part of ModelConfig
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;
};

const std::vector<ConfigKey>& config_keys();
const ConfigKey* find_config_key(std::string_view name);

/// Parses and assigns one value, recording the key as explicit. Throws
/// ConfigError for unknown keys and malformed values.
void set_config_value(RunConfig& config, std::string_view key, std::string_view value);

/// "key = value" lines; '#' starts a comment; blank lines are ignored.
void apply_config_text(RunConfig& config, std::string_view text);
void apply_config_file(RunConfig& config, const std::filesystem::path& path);

/// Every key in table order, one "key = value" line each.
std::string run_config_to_text(const RunConfig& config);

}  // namespace volcnn
