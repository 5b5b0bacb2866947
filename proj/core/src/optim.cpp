#include "volcnn/optim.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>

#include "volcnn/checkpoint.hpp"
#include "volcnn/metrics.hpp"

namespace volcnn {

namespace fs = std::filesystem;

template <typename T>
void sgd_step(ParamMap<T>& params, const ParamMap<T>& grads, ParamMap<T>& velocity, double lr,
              double momentum) {
  if (params.size() != grads.size()) {
    throw ConfigError("sgd_step: " + std::to_string(params.size()) + " parameters but " +
                      std::to_string(grads.size()) + " gradients");
  }
  for (const auto& [name, g] : grads) {
    if (!params.contains(name)) throw ConfigError("sgd_step: gradient for unknown parameter '" + name + "'");
  }
  for (const auto& [name, v] : velocity) {
    if (!params.contains(name)) throw ConfigError("sgd_step: velocity for unknown parameter '" + name + "'");
  }
  for (auto& [name, p] : params) {
    const Tensor<T>& g = grads.at(name);
    if (g.shape() != p.shape()) {
      throw ShapeError("sgd_step: gradient for '" + name + "' has shape " + shape_to_string(g.shape()) +
                       ", parameter " + shape_to_string(p.shape()));
    }
    auto [it, fresh] = velocity.try_emplace(name, p.shape());
    Tensor<T>& v = it->second;
    const T mu = static_cast<T>(momentum), eta = static_cast<T>(lr);
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = mu * v[i] + g[i];
      p[i] -= eta * v[i];
    }
  }
}

template void sgd_step(ParamMap<float>&, const ParamMap<float>&, ParamMap<float>&, double, double);
template void sgd_step(ParamMap<double>&, const ParamMap<double>&, ParamMap<double>&, double, double);

void TrainConfig::validate(const ModelConfig& model) const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0,1)");
  if (batch_size < 0) throw ConfigError("batch_size must be >= 1 (or 0 for auto)");
  if (model.norm == NormKind::kBatch && batch_size == 1) {
    throw ConfigError("batch normalization needs batch_size >= 2");
  }
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (!(preprocess.max_blur_sigma >= 0.0)) throw ConfigError("max_blur_sigma must be >= 0");
}

int TrainConfig::effective_batch_size(NormKind norm) const {
  if (batch_size > 0) return batch_size;
  return norm == NormKind::kBatch ? 16 : 4;
}

std::string TrainLog::format_row(const EpochRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.6f,%.3f,%d", r.epoch, r.train_loss, r.val_loss,
                r.val_bal_acc, r.seconds, r.checkpointed ? 1 : 0);
  return buf;
}

std::string TrainLog::to_csv() const {
  std::string out = std::string(kHeader) + "\n";
  for (const auto& r : epochs) out += format_row(r) + "\n";
  return out;
}

void TrainLog::write_csv(const fs::path& path) const {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError(DataErrorKind::kIo, "cannot write " + path.string());
  os << to_csv();
}

namespace {

Tensor<float> prepared(const VolumeSample& s, const PreprocessOptions& o) {
  return o.zscore ? intensity_normalize(s.volume) : s.volume;
}

Tensor<float> stack(const std::vector<Tensor<float>>& items) {
  Shape shape = items.front().shape();
  shape.insert(shape.begin(), items.size());
  Tensor<float> out(shape);
  float* dst = out.ptr();
  for (const auto& t : items) dst = std::copy_n(t.ptr(), t.size(), dst);
  return out;
}

void check_sets(const std::vector<VolumeSample>& train_set, const std::vector<VolumeSample>& val_set) {
  if (train_set.empty()) throw DataError(DataErrorKind::kBadValue, "training set is empty");
  if (val_set.empty()) throw DataError(DataErrorKind::kBadValue, "validation set is empty");
  std::set<std::string> train_subjects;
  for (const auto& s : train_set) {
    if (s.split != Split::kTrain) {
      throw DataError(DataErrorKind::kLeakage, "sample of subject " + s.subject_id + " tagged " +
                                                   std::string(to_string(s.split)) + " passed as training data");
    }
    train_subjects.insert(s.subject_id);
  }
  for (const auto& s : val_set) {
    if (s.split != Split::kVal) {
      throw DataError(DataErrorKind::kLeakage, "sample of subject " + s.subject_id + " tagged " +
                                                   std::string(to_string(s.split)) + " passed as validation data");
    }
    if (train_subjects.contains(s.subject_id)) {
      throw DataError(DataErrorKind::kLeakage, "subject " + s.subject_id + " is in both train and val");
    }
  }
}

struct EvalPass {
  double loss = 0.0;
  std::vector<std::array<double, kNumClasses>> probs;
  std::vector<int> preds;
};

EvalPass evaluate(const Network<float>& net, const std::vector<Tensor<float>>& inputs,
                  const std::vector<VolumeSample>& samples, int batch_size) {
  EvalPass out;
  const std::size_t n = inputs.size();
  const auto b = static_cast<std::size_t>(std::max(1, batch_size));
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < n; start += b) {
    const std::size_t end = std::min(n, start + b);
    std::vector<Tensor<float>> items(inputs.begin() + static_cast<std::ptrdiff_t>(start),
                                     inputs.begin() + static_cast<std::ptrdiff_t>(end));
    std::vector<int> labels;
    std::vector<double> ages;
    for (std::size_t i = start; i < end; ++i) {
      labels.push_back(samples[i].label);
      ages.push_back(samples[i].age);
    }
    const ForwardResult<float> fr = forward(net, stack(items), ages);
    const SoftmaxXent<float> sx = softmax_xent(fr.logits, labels);
    loss_sum += sx.loss * static_cast<double>(end - start);
    for (std::size_t i = 0; i < end - start; ++i) {
      std::array<double, kNumClasses> p{};
      // renormalize in double so rows sum to 1 to rounding
      double s = 0.0;
      for (std::size_t c = 0; c < kNumClasses; ++c) s += p[c] = sx.probs[i * kNumClasses + c];
      for (double& v : p) v /= s;
      out.probs.push_back(p);
      out.preds.push_back(static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin()));
    }
  }
  out.loss = loss_sum / static_cast<double>(n);
  return out;
}

}  // namespace

Tensor<float> eval_input(const VolumeSample& sample, std::size_t crop, const PreprocessOptions& options) {
  return center_crop(prepared(sample, options), crop).volume;
}

Tensor<float> train_input(const VolumeSample& sample, std::size_t crop, const PreprocessOptions& options,
                          std::uint64_t seed, std::uint64_t counter) {
  Rng rng = Rng(seed, static_cast<std::uint64_t>(Stream::kAugment)).split(counter);
  const double sigma = rng.uniform(0.0, options.max_blur_sigma);
  return random_crop(gaussian_blur(prepared(sample, options), sigma), crop, rng).volume;
}

Prediction predict(const Network<float>& net, const std::vector<VolumeSample>& samples,
                   const PreprocessOptions& options, int batch_size) {
  if (samples.empty()) throw DataError(DataErrorKind::kBadValue, "no samples to predict");
  const auto crop = static_cast<std::size_t>(net.config().crop_extent);
  std::vector<Tensor<float>> inputs;
  for (const auto& s : samples) inputs.push_back(eval_input(s, crop, options));
  EvalPass e = evaluate(net, inputs, samples, batch_size);
  return {std::move(e.probs), std::move(e.preds), e.loss};
}

TrainResult train(Network<float> net, const std::vector<VolumeSample>& train_set,
                  const std::vector<VolumeSample>& val_set, const TrainConfig& config) {
  const ModelConfig& model = net.config();
  config.validate(model);
  check_sets(train_set, val_set);
  const auto crop = static_cast<std::size_t>(model.crop_extent);
  const auto batch = static_cast<std::size_t>(config.effective_batch_size(model.norm));
  const bool batch_norm = model.norm == NormKind::kBatch;

  std::vector<double> class_weights;
  if (config.class_weights) {
    std::array<std::size_t, kNumClasses> count{};
    for (const auto& s : train_set) ++count[static_cast<std::size_t>(s.label)];
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      class_weights.push_back(count[c] ? static_cast<double>(train_set.size()) /
                                             (kNumClasses * static_cast<double>(count[c]))
                                       : 0.0);
    }
  }

  // Z-scoring happens once; augmentation works on the normalized volumes.
  PreprocessOptions raw = config.preprocess;
  raw.zscore = false;
  std::vector<VolumeSample> train_norm = train_set;
  if (config.preprocess.zscore) {
    for (auto& s : train_norm) s.volume = intensity_normalize(s.volume);
  }
  std::vector<Tensor<float>> val_inputs;
  for (const auto& s : val_set) val_inputs.push_back(eval_input(s, crop, config.preprocess));
  const int eval_batch = static_cast<int>(std::max<std::size_t>(batch, 4));

  TrainResult result{net, std::numeric_limits<double>::infinity(), 0, {}};
  ParamMap<float> velocity;
  const Rng shuffle_root(config.seed, static_cast<std::uint64_t>(Stream::kShuffle));
  const std::size_t n = train_norm.size();
  std::vector<std::size_t> order(n);

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle = shuffle_root.split(static_cast<std::uint64_t>(epoch));
    shuffle.shuffle(std::span<std::size_t>(order));

    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0, b_index = 0; start < n; start += batch, ++b_index) {
      const std::size_t end = std::min(n, start + batch);
      if (batch_norm && end - start < 2) break;  // batch statistics need two samples
      std::vector<Tensor<float>> items;
      std::vector<int> labels;
      std::vector<double> ages;
      for (std::size_t k = start; k < end; ++k) {
        const VolumeSample& s = train_norm[order[k]];
        const std::uint64_t counter = static_cast<std::uint64_t>(epoch - 1) * n + k;
        items.push_back(train_input(s, crop, raw, config.seed, counter));
        labels.push_back(s.label);
        ages.push_back(s.age);
      }
      ForwardResult<float> fr = forward_train(net, stack(items), ages);
      SoftmaxXent<float> sx = softmax_xent(fr.logits, labels, class_weights);
      if (!std::isfinite(sx.loss)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(b_index));
      }
      Gradients<float> g = backward(net, fr.tape, sx.grad);
      sgd_step(net.mutable_params(), g.params, velocity, config.learning_rate, config.momentum);
      loss_sum += sx.loss * static_cast<double>(end - start);
      seen += end - start;
    }

    const EvalPass val = evaluate(net, val_inputs, val_set, eval_batch);
    if (!std::isfinite(val.loss)) {
      throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch));
    }
    std::vector<int> val_labels;
    for (const auto& s : val_set) val_labels.push_back(s.label);
    const bool was = warnings_enabled();
    set_warnings_enabled(false);
    const double bal = balanced_accuracy(val.preds, val_labels);
    set_warnings_enabled(was);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
    rec.val_loss = val.loss;
    rec.val_bal_acc = bal;
    rec.checkpointed = val.loss < result.best_val_loss;
    if (rec.checkpointed) {
      result.best = net;
      result.best_val_loss = val.loss;
      result.best_epoch = epoch;
      if (!config.checkpoint_path.empty()) {
        save_checkpoint(config.checkpoint_path, net, velocity, val.loss);
      }
    }
    if (config.log_wall_time) {
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    result.log.epochs.push_back(rec);
    if (config.echo) {
      if (epoch == 1) std::cout << TrainLog::kHeader << '\n';
      std::cout << TrainLog::format_row(rec) << std::endl;
    }
  }
  return result;
}

}  // namespace volcnn
