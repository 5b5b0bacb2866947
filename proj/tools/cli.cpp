#include "cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>

#include "volcnn/checkpoint.hpp"
#include "volcnn/data.hpp"
#include "volcnn/gradcheck.hpp"
#include "volcnn/metrics.hpp"
#include "volcnn/optim.hpp"
#include "volcnn/parallel.hpp"
#include "volcnn/run_config.hpp"
#include "volcnn/saliency.hpp"

namespace volcnn::cli {

namespace fs = std::filesystem;

namespace {

fs::path make_run_dir(const RunConfig& cfg) {
  fs::path dir;
  if (!cfg.run_dir.empty()) {
    dir = cfg.run_dir;
  } else {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
    const fs::path base = fs::path(cfg.out_dir) / (std::string(stamp) + "-seed" + std::to_string(cfg.seed));
    dir = base;
    for (int k = 1; fs::exists(dir); ++k) dir = base.string() + "-" + std::to_string(k);
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError(DataErrorKind::kIo, "cannot create run directory " + dir.string() + ": " + ec.message());
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError(DataErrorKind::kIo, "cannot write " + path.string());
  os << text;
}

void echo_config(const RunConfig& cfg, const fs::path& dir, std::ostream& out) {
  const std::string text = run_config_to_text(cfg);
  out << "# effective configuration\n" << text << "# run directory: " << dir.string() << "\n";
  write_text(dir / "config.cfg", text);
}

Manifest load_data(const RunConfig& cfg, std::ostream& out) {
  if (cfg.manifest.empty()) throw ConfigError("--manifest is required");
  Manifest m = load_manifest(cfg.manifest, cfg.allow_leakage);
  out << "manifest " << cfg.manifest << ": " << m.rows.size() << " scans\n";
  return m;
}

std::vector<VolumeSample> load_nonempty(const Manifest& m, Split split) {
  std::vector<VolumeSample> s = load_split(m, split);
  if (s.empty()) {
    throw DataError(DataErrorKind::kBadManifest, "split '" + std::string(to_string(split)) + "' has no samples");
  }
  return s;
}

struct TrainOutcome {
  TrainResult result;
  Manifest manifest;
};

TrainOutcome train_run(const RunConfig& cfg, const fs::path& dir, std::ostream& out) {
  Manifest manifest = load_data(cfg, out);
  if (cfg.subsample_rate != 1.0) {
    Rng rng(cfg.seed, static_cast<std::uint64_t>(Stream::kSubsample));
    manifest = subsample(manifest, cfg.subsample_rate, rng);
    out << "subsampled train subjects at rate " << cfg.subsample_rate << "\n";
  }
  out << format_counts(count_splits(manifest));
  const std::vector<VolumeSample> train_set = load_nonempty(manifest, Split::kTrain);
  const std::vector<VolumeSample> val_set = load_nonempty(manifest, Split::kVal);

  Rng init(cfg.seed, static_cast<std::uint64_t>(Stream::kInit));
  Network<float> net = build<float>(cfg.model, init);
  TrainConfig tc = cfg.train_config();
  tc.checkpoint_path = dir / "best.ckpt";
  tc.validate(cfg.model);
  out << "parameters: " << net.parameter_count() << ", batch size: " << tc.effective_batch_size(cfg.model.norm)
      << "\n";
  TrainResult result = train(std::move(net), train_set, val_set, tc);
  result.log.write_csv(dir / "train_log.csv");
  const Prediction p = predict(result.best, train_set, tc.preprocess);
  std::vector<int> labels;
  for (const auto& s : train_set) labels.push_back(s.label);
  char line[128];
  std::snprintf(line, sizeof line, "best epoch %d, val loss %.6f, train accuracy %.4f\n", result.best_epoch,
                result.best_val_loss, accuracy(p.preds, labels));
  out << line;
  return {std::move(result), std::move(manifest)};
}

EvalReport eval_run(const Network<float>& net, const Manifest& manifest, const RunConfig& cfg, const fs::path& dir,
                    std::ostream& out) {
  const Split split = parse_split(cfg.split);
  const std::vector<VolumeSample> samples = load_nonempty(manifest, split);
  PreprocessOptions pre;
  pre.zscore = cfg.zscore;
  const Prediction p = predict(net, samples, pre);
  std::vector<SampleRecord> records;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    records.push_back({samples[i].subject_id, samples[i].label, p.probs[i], p.preds[i]});
  }
  const EvalReport report = make_report(std::move(records), cfg.split, cfg.bootstrap_options(), Rng(cfg.seed));
  write_report(dir / "report.json", report);
  write_logits_csv(dir / "logits.csv", report.records);
  export_roc(report, dir / "roc");
  out << format_headline(report);
  return report;
}

Checkpoint load_for(const RunConfig& cfg) {
  if (cfg.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  Checkpoint ck = load_checkpoint(cfg.checkpoint);
  if (cfg.model_keys_explicit() && !(cfg.model == ck.net.config())) {
    throw ConfigError("model options do not match the checkpoint:\ncheckpoint:\n" +
                      model_config_to_text(ck.net.config()) + "requested:\n" + model_config_to_text(cfg.model));
  }
  return ck;
}

void require_manifest(const RunConfig& cfg) {
  if (cfg.manifest.empty()) throw ConfigError("--manifest is required");
}

int cmd_train(RunConfig cfg, std::ostream& out) {
  require_manifest(cfg);
  const fs::path dir = make_run_dir(cfg);
  echo_config(cfg, dir, out);
  train_run(cfg, dir, out);
  out << "checkpoint: " << (dir / "best.ckpt").string() << "\n";
  return kOk;
}

int cmd_eval(RunConfig cfg, std::ostream& out) {
  require_manifest(cfg);
  const Checkpoint ck = load_for(cfg);
  cfg.model = ck.net.config();
  const fs::path dir = make_run_dir(cfg);
  echo_config(cfg, dir, out);
  const Manifest manifest = load_data(cfg, out);
  eval_run(ck.net, manifest, cfg, dir, out);
  return kOk;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find(',', pos);
    if (end == std::string::npos) end = text.size();
    std::string item = text.substr(pos, end - pos);
    if (!item.empty()) out.push_back(item);
    pos = end + 1;
  }
  return out;
}

int cmd_ablate(RunConfig cfg, std::ostream& out, std::ostream& err) {
  static const std::map<std::string, std::string> axis_key = {{"width", "widening_factor"},
                                                               {"depth", "extra_blocks"},
                                                               {"norm", "norm"},
                                                               {"first_layer", "first_layer"},
                                                               {"subsample", "subsample_rate"}};
  const auto it = axis_key.find(cfg.axis);
  if (it == axis_key.end()) throw ConfigError("--axis must be one of width, depth, norm, first_layer, subsample");
  const std::vector<std::string> values = split_list(cfg.values);
  if (values.empty()) throw ConfigError("--values is required");
  require_manifest(cfg);
  // Validate every value before running anything.
  std::vector<RunConfig> runs;
  for (const auto& v : values) {
    RunConfig sub = cfg;
    set_config_value(sub, it->second, v);
    sub.model.validate();
    runs.push_back(sub);
  }
  const fs::path dir = make_run_dir(cfg);
  echo_config(cfg, dir, out);

  std::string csv =
      "value,batch_size,accuracy,balanced_accuracy,micro_auc,macro_auc,accuracy_lo,accuracy_hi,"
      "balanced_accuracy_lo,balanced_accuracy_hi,micro_auc_lo,micro_auc_hi,macro_auc_lo,macro_auc_hi,status\n";
  int failures = 0;
  for (std::size_t k = 0; k < runs.size(); ++k) {
    RunConfig& sub = runs[k];
    const fs::path sub_dir = dir / (cfg.axis + "_" + values[k]);
    sub.run_dir = sub_dir.string();
    fs::create_directories(sub_dir);
    const int batch = sub.train_config().effective_batch_size(sub.model.norm);
    out << "== " << cfg.axis << " = " << values[k] << " (batch size " << batch << ")\n";
    write_text(sub_dir / "config.cfg", run_config_to_text(sub));
    try {
      const TrainOutcome t = train_run(sub, sub_dir, out);
      const EvalReport r = eval_run(t.result.best, t.manifest, sub, sub_dir, out);
      char row[512];
      auto f = [](double v) { return std::isfinite(v) ? v : -1.0; };
      std::snprintf(row, sizeof row, "%s,%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,ok\n",
                    values[k].c_str(), batch, f(r.accuracy), f(r.balanced_accuracy), f(r.micro_auc), f(r.macro_auc),
                    f(r.ci[0].lo), f(r.ci[0].hi), f(r.ci[1].lo), f(r.ci[1].hi), f(r.ci[2].lo), f(r.ci[2].hi),
                    f(r.ci[3].lo), f(r.ci[3].hi));
      csv += row;
    } catch (const Error& e) {
      ++failures;
      err << "error: " << cfg.axis << " = " << values[k] << ": " << e.what() << "\n";
      csv += values[k] + "," + std::to_string(batch) + ",,,,,,,,,,,,,failed\n";
    }
  }
  const fs::path summary = dir / ("ablation_" + cfg.axis + ".csv");
  write_text(summary, csv);
  out << "summary: " << summary.string() << "\n";
  return failures ? kInternal : kOk;
}

std::vector<SliceView> views_for(const RunConfig& cfg, std::size_t extent, std::ostream& out) {
  if (!cfg.views.empty()) return parse_views(cfg.views);
  std::vector<SliceView> views = default_views();
  // The default indices refer to a 96-voxel crop; other crops use the same relative position.
  if (extent != 96) {
    for (auto& v : views) v.index = v.index * extent / 96;
    out << "default views scaled to extent " << extent << ": " << format_views(views) << "\n";
  }
  return views;
}

int cmd_saliency(RunConfig cfg, std::ostream& out) {
  require_manifest(cfg);
  const Checkpoint ck = load_for(cfg);
  cfg.model = ck.net.config();
  const fs::path dir = make_run_dir(cfg);
  echo_config(cfg, dir, out);
  const Manifest manifest = load_data(cfg, out);
  const std::vector<VolumeSample> samples = load_nonempty(manifest, parse_split(cfg.split));
  const auto crop = static_cast<std::size_t>(cfg.model.crop_extent);
  const std::vector<SliceView> views = views_for(cfg, crop, out);
  PreprocessOptions pre;
  pre.zscore = cfg.zscore;

  const fs::path sal = dir / "saliency";
  fs::create_directories(sal);
  std::vector<SaliencyMap> maps;
  std::size_t files = 0;
  for (const auto& s : samples) {
    const Tensor<float> x = eval_input(s, crop, pre);
    SaliencyMap m = saliency(ck.net, x, s.label, s.age);
    files += export_slices(smooth(m, cfg.smooth_sigma), views, (sal / s.subject_id).string()).size();
    maps.push_back(std::move(m));
  }
  const SaliencyMap agg = smooth(aggregate(maps), cfg.smooth_sigma);
  files += export_slices(agg, views, (sal / "aggregate").string()).size();
  write_native(sal / "aggregate.vol", agg.values);
  ++files;
  out << "saliency: " << samples.size() << " samples, " << files << " files in " << sal.string() << "\n";
  return kOk;
}

int cmd_gradcheck(const RunConfig& cfg, bool inject_conv, std::ostream& out, std::ostream& err) {
  GradcheckOptions o;
  o.scope = parse_gradcheck_scope(cfg.scope);
  o.seed = cfg.seed;
  o.corrupt_conv_backward = inject_conv;
  out << "# effective configuration\n" << run_config_to_text(cfg);
  const std::vector<GradcheckEntry> entries = run_gradcheck(o);
  out << format_gradcheck(entries);
  std::string failed;
  for (const auto& e : entries) {
    if (!e.passed) failed += (failed.empty() ? "" : ", ") + e.op;
  }
  if (!failed.empty()) {
    err << "error: gradient check failed for: " << failed << "\n";
    return kNumericError;
  }
  out << "all gradient checks passed\n";
  return kOk;
}

int cmd_synth(const RunConfig& cfg, std::ostream& out) {
  const fs::path dir = make_run_dir(cfg);
  echo_config(cfg, dir, out);
  SyntheticOptions o;
  o.n_per_class = cfg.n_per_class;
  o.extent = cfg.extent;
  o.noise = cfg.noise;
  o.val_fraction = cfg.val_fraction;
  o.test_fraction = cfg.test_fraction;
  Rng rng(cfg.seed, static_cast<std::uint64_t>(Stream::kSynth));
  const std::vector<VolumeSample> samples = generate_synthetic(o, rng);
  Manifest m;
  m.base_dir = dir;
  for (const auto& s : samples) {
    const std::string rel = "volumes/" + s.subject_id + ".vol";
    write_native(dir / rel, s.volume);
    m.rows.push_back({s.subject_id, rel, s.label, s.age, s.split});
  }
  write_manifest(dir / "manifest.csv", m);
  out << format_counts(count_splits(m));
  out << "manifest: " << (dir / "manifest.csv").string() << "\n";
  return kOk;
}

int exit_code_for(const DataError& e) {
  return e.kind() == DataErrorKind::kIo ? kIoError : kDataError;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Volumetric CNN engine: training, evaluation, ablations, saliency maps and gradient checks", "volcnn"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  struct Command {
    CLI::App* app = nullptr;
    std::string config_file;
    std::map<std::string, std::string> values;
  };
  std::map<std::string, Command> commands;
  const std::vector<std::pair<std::string, std::string>> specs = {
      {"train", "Train a model on a manifest's train split, selecting by validation loss"},
      {"eval", "Evaluate a checkpoint on one split"},
      {"ablate", "Train and evaluate one run per value along an ablation axis"},
      {"saliency", "Gradient saliency maps for a split, with aggregate and slice export"},
      {"gradcheck", "Finite-difference check of every backward pass"},
      {"synth", "Write a synthetic three-class dataset and manifest"},
  };
  bool inject_conv = false;
  for (const auto& [name, help] : specs) {
    Command& c = commands[name];
    c.app = app.add_subcommand(name, help);
    c.app->add_option("--config", c.config_file, "key = value configuration file");
    for (const auto& key : config_keys()) {
      c.app->add_option_function<std::string>(
          "--" + key.name, [&c, n = key.name](const std::string& v) { c.values[n] = v; }, key.help);
    }
  }
  commands["gradcheck"].app->add_flag("--inject_fault_conv3d", inject_conv)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    if (const auto subs = app.get_subcommands(); !subs.empty()) {
      err << subs.front()->help();
    } else {
      err << app.help();
    }
    return kConfigError;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  const Command& cmd = commands.at(name);
  try {
    RunConfig cfg;
    if (!cmd.config_file.empty()) apply_config_file(cfg, cmd.config_file);
    for (const auto& key : config_keys()) {
      if (auto it = cmd.values.find(key.name); it != cmd.values.end()) set_config_value(cfg, key.name, it->second);
    }
    if (cfg.threads < 1) throw ConfigError("--threads must be >= 1");
    set_num_threads(cfg.threads);
    cfg.model.validate();

    if (name == "train") return cmd_train(cfg, out);
    if (name == "eval") return cmd_eval(cfg, out);
    if (name == "ablate") return cmd_ablate(cfg, out, err);
    if (name == "saliency") return cmd_saliency(cfg, out);
    if (name == "gradcheck") return cmd_gradcheck(cfg, inject_conv, out, err);
    if (name == "synth") return cmd_synth(cfg, out);
    return kInternal;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kNumericError;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kIoError;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kInternal;
  }
}

}  // namespace volcnn::cli
