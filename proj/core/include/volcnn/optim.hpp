#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "volcnn/data.hpp"
#include "volcnn/model.hpp"

namespace volcnn {

/// Classical momentum: v <- momentum * v + g; p <- p - lr * v. Missing
/// velocity entries start at zero. Key sets of params and grads must match.
template <typename T>
void sgd_step(ParamMap<T>& params, const ParamMap<T>& grads, ParamMap<T>& velocity, double lr,
              double momentum);

/// How a sample becomes a network input.
struct PreprocessOptions {
  bool zscore = true;           // per volume, before augmentation
  double max_blur_sigma = 1.5;  // training blur sigma ~ U[0, max]
};

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  int batch_size = 0;  // 0: 4 for instance norm, 16 for batch norm
  int max_epochs = 100;
  std::uint64_t seed = 0;
  std::filesystem::path checkpoint_path;  // empty: keep the best network in memory only
  bool class_weights = false;             // inverse class frequency in the loss
  PreprocessOptions preprocess;
  bool log_wall_time = false;  // off: seconds column is 0 so reruns give identical logs
  bool echo = true;           // print each epoch's log row to stdout

  void validate(const ModelConfig& model) const;
  int effective_batch_size(NormKind norm) const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_bal_acc = 0.0;
  double seconds = 0.0;
  bool checkpointed = false;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;

  static constexpr const char* kHeader = "epoch,train_loss,val_loss,val_bal_acc,seconds,checkpointed";
  static std::string format_row(const EpochRecord& r);
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

struct TrainResult {
  Network<float> best;  // parameters at the lowest validation loss
  double best_val_loss = 0.0;
  int best_epoch = 0;
  TrainLog log;
};

/// Runs the training protocol: per epoch a seeded shuffle, per sample a blur
/// with random sigma and a random crop (substream = global sample counter),
/// SGD steps over minibatches, then a validation pass with center crops. The
/// checkpoint is rewritten whenever validation loss strictly improves.
/// Train samples must all be tagged train, validation samples val, and the
/// two sets must not share subjects.
TrainResult train(Network<float> net, const std::vector<VolumeSample>& train_set,
                  const std::vector<VolumeSample>& val_set, const TrainConfig& config);

/// Deterministic network input for evaluation: z-score (optional) and center crop.
Tensor<float> eval_input(const VolumeSample& sample, std::size_t crop, const PreprocessOptions& options);

/// Training input for the sample at global position `counter` in the sample stream.
Tensor<float> train_input(const VolumeSample& sample, std::size_t crop, const PreprocessOptions& options,
                          std::uint64_t seed, std::uint64_t counter);

struct Prediction {
  std::vector<std::array<double, kNumClasses>> probs;
  std::vector<int> preds;
  double loss = 0.0;  // mean NLL
};

Prediction predict(const Network<float>& net, const std::vector<VolumeSample>& samples,
                   const PreprocessOptions& options, int batch_size = 4);

}  // namespace volcnn
