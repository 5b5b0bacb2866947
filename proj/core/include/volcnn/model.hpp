#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "volcnn/ops.hpp"
#include "volcnn/tensor.hpp"

namespace volcnn {

/// First convolution of block 1: kernel/stride k1-s1 (the backbone), k3-s2 or k7-s4.
enum class FirstLayer { kK1S1, kK3S2, kK7S4 };

/// How patient age enters the network.
///   kNone            image only
///   kEncoded         sinusoidal code -> Linear(512) -> LayerNorm -> Linear(1024), added to FC1
///   kConcatBaseline  age/120 appended to the flattened conv features
enum class AgeMode { kNone, kEncoded, kConcatBaseline };

std::string_view to_string(NormKind kind);
std::string_view to_string(FirstLayer layer);
std::string_view to_string(AgeMode mode);
NormKind parse_norm_kind(std::string_view text);
FirstLayer parse_first_layer(std::string_view text);
AgeMode parse_age_mode(std::string_view text);

inline constexpr std::size_t kFc1Width = 1024;
inline constexpr std::size_t kAgeHidden = 512;

/// Every architectural axis the ablations vary.
struct ModelConfig {
  int widening_factor = 1;
  NormKind norm = NormKind::kInstance;
  FirstLayer first_layer = FirstLayer::kK1S1;
  int extra_blocks = 0;
  AgeMode age_mode = AgeMode::kNone;
  int crop_extent = 96;
  int num_classes = 3;
  int d_model = 128;
  /// Shrink windows that would collapse a normalized feature map below 2
  /// voxels per axis (see plan_architecture). No effect on the 96^3 backbone.
  bool adapt_small_inputs = true;

  /// Range checks on individual fields. Shape feasibility is checked by
  /// plan_architecture.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// "key = value" lines, one per field, in a fixed order.
std::string model_config_to_text(const ModelConfig& config);
ModelConfig model_config_from_text(std::string_view text);

std::string describe(const ConvSpec& spec);
std::string describe(const PoolSpec& spec);

/// One conv -> norm -> ReLU [-> max-pool] stage after window fitting.
struct StagePlan {
  std::string name;
  std::size_t in_channels = 1;
  ConvSpec nominal_conv;
  ConvSpec conv;
  NormKind norm = NormKind::kInstance;
  std::optional<PoolSpec> nominal_pool;
  std::optional<PoolSpec> pool;
  std::string pool_name;
};

struct LayerShape {
  std::string name;
  Shape shape;
  bool operator==(const LayerShape&) const = default;
};

struct Architecture {
  std::vector<StagePlan> stages;
  std::size_t conv_features = 0;  // flattened size of the last feature map
  std::size_t fc1_in = 0;         // conv_features, +1 for the concatenated age
  std::vector<LayerShape> layers; // output shape of every layer for a batch of 1
};

/// Lays out the backbone for `config` and computes every layer's output shape
/// without running a forward pass.
///
/// Stages: block1..block4 with the channel progression 4f, 32f, 64f, 64f,
/// followed by `extra_blocks` channel-preserving k3-s1-p1 stages that always
/// use instance normalization. The block-4 max-pool (k5-s2) is the last layer
/// before flattening, so extra stages run on the 6^3 map rather than after the
/// pool has reduced it to 1^3. FC1's input size comes from the computed final
/// map, not from a fixed table value.
///
/// With adapt_small_inputs, a conv whose output would be < 2 per axis has its
/// dilation lowered (then falls back to "same" padding at dilation 1), and an
/// inner max-pool its window and then stride, until
/// the output reaches 2 (or at least 1). The final pool only clamps its window
/// to its input. Throws ShapeError naming the first layer that cannot fit.
Architecture plan_architecture(const ModelConfig& config);

/// Output shape of every layer for a batch of `batch` volumes.
std::vector<LayerShape> infer_shapes(const ModelConfig& config, std::size_t batch = 1);

template <typename T>
using ParamMap = std::map<std::string, Tensor<T>>;

/// Built network: configuration, layer plan, named parameters and non-trained
/// buffers (batch-norm running statistics).
///
/// Parameter names: "<stage>.conv.weight|bias", "<stage>.norm.gamma|beta",
/// "fc1.weight|bias", "fc2.weight|bias" and, in encoded-age mode,
/// "age.fc1.*", "age.norm.gamma|beta", "age.fc2.*". Buffers:
/// "<stage>.norm.running_mean|running_var" for batch-normalized stages.
template <typename T>
class Network {
 public:
  Network(ModelConfig config, Architecture arch, ParamMap<T> params, ParamMap<T> buffers);
  Network(const Network& other);
  Network& operator=(const Network& other);
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  const ModelConfig& config() const noexcept { return config_; }
  const Architecture& architecture() const noexcept { return arch_; }
  const ParamMap<T>& params() const noexcept { return params_; }
  const ParamMap<T>& buffers() const noexcept { return buffers_; }
  const Tensor<T>& param(const std::string& name) const;

  /// Mutable access invalidates every tape recorded before the call.
  ParamMap<T>& mutable_params();
  ParamMap<T>& mutable_buffers() noexcept { return buffers_; }

  std::uint64_t id() const noexcept { return id_; }
  std::uint64_t version() const noexcept { return version_; }
  std::size_t parameter_count() const;

  template <typename U>
  Network<U> cast() const {
    ParamMap<U> p, b;
    for (const auto& [k, v] : params_) p.emplace(k, v.template cast<U>());
    for (const auto& [k, v] : buffers_) b.emplace(k, v.template cast<U>());
    return Network<U>(config_, arch_, std::move(p), std::move(b));
  }

 private:
  ModelConfig config_;
  Architecture arch_;
  ParamMap<T> params_;
  ParamMap<T> buffers_;
  std::uint64_t id_;
  std::uint64_t version_ = 0;
};

/// Kaiming-uniform conv/linear weights, zero biases and betas, unit gammas,
/// running mean 0 and variance 1.
template <typename T>
Network<T> build(const ModelConfig& config, Rng& rng);

/// Intermediate state recorded by forward and consumed by backward.
template <typename T>
struct Tape {
  struct Stage {
    Tensor<T> input;
    NormState<T> norm;
    Tensor<T> norm_out;
    std::vector<std::size_t> pool_argmax;
    Shape pool_input_shape;
  };

  std::uint64_t network_id = 0;
  std::uint64_t network_version = 0;
  Shape input_shape;
  std::vector<Stage> stages;
  Shape conv_out_shape;
  Tensor<T> features;  // FC1 input
  Tensor<T> fc1_pre;   // FC1 output plus age head, before ReLU
  Tensor<T> hidden;    // FC2 input
  Tensor<T> age_code;
  Tensor<T> age_h1;
  NormState<T> age_norm;
  Tensor<T> age_h2;
  std::vector<LayerShape> observed;
};

template <typename T>
struct ForwardResult {
  Tensor<T> logits;  // pre-softmax scores [N, num_classes]
  Tape<T> tape;
};

/// Evaluation-mode forward pass. volumes: [N,1,c,c,c] with c = crop_extent.
/// `ages` (years) must hold N values when the age mode is not kNone.
template <typename T>
ForwardResult<T> forward(const Network<T>& net, const Tensor<T>& volumes,
                         std::span<const double> ages = {});

/// Training-mode forward pass: batch-norm stages use batch statistics and
/// update the running statistics. Identical to forward() for instance norm.
template <typename T>
ForwardResult<T> forward_train(Network<T>& net, const Tensor<T>& volumes,
                               std::span<const double> ages = {});

template <typename T>
struct Gradients {
  ParamMap<T> params;
  Tensor<T> input;  // only filled when requested
};

/// Reverse pass from d loss / d logits. Throws if the network's parameters
/// changed since the tape was recorded.
template <typename T>
Gradients<T> backward(const Network<T>& net, const Tape<T>& tape, const Tensor<T>& grad_logits,
                      bool input_grad = false);

}  // namespace volcnn
