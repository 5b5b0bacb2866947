#pragma once

// Differentiable layers of the volumetric network. Every forward op has a
// matching backward op mapping the upstream gradient to input and parameter
// gradients. Volumes use the channel-first layout [N, C, D, H, W].

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "volcnn/tensor.hpp"

namespace volcnn {

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

/// Cubic 3D convolution: kernel extent, output channels, padding, stride, dilation.
struct ConvSpec {
  int kernel = 1;
  int out_channels = 1;
  int padding = 0;
  int stride = 1;
  int dilation = 1;

  int effective_kernel() const { return dilation * (kernel - 1) + 1; }
  void validate() const;
  bool operator==(const ConvSpec&) const = default;
};

/// floor((in + 2p - d(k-1) - 1) / s) + 1, or nullopt when the dilated kernel
/// does not fit in the padded input.
std::optional<std::size_t> conv_output_extent(std::size_t in, const ConvSpec& spec);

/// Cross-correlation (no kernel flip) with per-channel bias.
/// x: [N,C,D,H,W], w: [C_out,C,k,k,k], b: [C_out].
template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                         const ConvSpec& spec);

template <typename T>
struct ConvGrads {
  Tensor<T> x;  // left as a scalar placeholder when the input gradient is not requested
  Tensor<T> w;
  Tensor<T> b;
};

template <typename T>
ConvGrads<T> conv3d_backward(const Tensor<T>& grad_out, const Tensor<T>& x, const Tensor<T>& w,
                             const ConvSpec& spec, bool need_input_grad = true);

// ---------------------------------------------------------------------------
// Max pooling
// ---------------------------------------------------------------------------

/// Unpadded cubic max pooling window.
struct PoolSpec {
  int kernel = 2;
  int stride = 2;
  bool operator==(const PoolSpec&) const = default;
};

/// floor((in - k) / s) + 1, or nullopt when the window is larger than the input.
std::optional<std::size_t> pool_output_extent(std::size_t in, const PoolSpec& spec);

template <typename T>
struct PoolResult {
  Tensor<T> out;
  /// Flat input offset of the selected element for each output element. Ties
  /// resolve to the first maximum in row-major window order.
  std::vector<std::size_t> argmax;
};

template <typename T>
PoolResult<T> maxpool3d_forward(const Tensor<T>& x, const PoolSpec& spec);

/// Routes each upstream gradient to its argmax position, accumulating on overlap.
template <typename T>
Tensor<T> maxpool3d_backward(const Tensor<T>& grad_out, std::span<const std::size_t> argmax,
                             const Shape& input_shape);

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

enum class NormKind { kInstance, kBatch, kLayer };
enum class NormMode { kTrain, kEval };

inline constexpr double kNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Everything backward needs from a normalization forward call.
template <typename T>
struct NormState {
  NormKind kind = NormKind::kInstance;
  NormMode mode = NormMode::kTrain;
  Shape shape;
  Tensor<T> xhat;            // pre-affine normalized input
  std::vector<T> inv_std;    // one per normalization group
  Tensor<T> gamma;
};

template <typename T>
struct NormOutput {
  Tensor<T> y;
  NormState<T> state;
};

template <typename T>
struct RunningStats {
  Tensor<T> mean;
  Tensor<T> var;
};

/// Per (sample, channel) statistics over spatial positions, biased variance.
/// Identical in training and evaluation: no running statistics exist.
template <typename T>
NormOutput<T> instance_norm_forward(const Tensor<T>& x, const Tensor<T>& gamma,
                                    const Tensor<T>& beta, double eps = kNormEps);

/// Per-channel statistics over batch and spatial positions. Training mode
/// normalizes with batch statistics and folds them into `stats` (running
/// variance uses the unbiased estimate); evaluation mode normalizes with `stats`.
template <typename T>
NormOutput<T> batch_norm_forward(const Tensor<T>& x, const Tensor<T>& gamma,
                                 const Tensor<T>& beta, RunningStats<T>& stats, NormMode mode,
                                 double momentum = kBatchNormMomentum, double eps = kNormEps);

/// Normalizes each row of x: [*, F] over its last axis; gamma, beta: [F].
template <typename T>
NormOutput<T> layer_norm_forward(const Tensor<T>& x, const Tensor<T>& gamma,
                                 const Tensor<T>& beta, double eps = kNormEps);

template <typename T>
struct NormGrads {
  Tensor<T> x;
  Tensor<T> gamma;
  Tensor<T> beta;
};

template <typename T>
NormGrads<T> norm_backward(NormKind kind, const Tensor<T>& grad_out, const NormState<T>& state);

// ---------------------------------------------------------------------------
// Pointwise, dense and loss layers
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

/// Passes grad where x > 0; the subgradient at 0 is 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& x);

/// y = x w^T + b with x: [N,F_in], w: [F_out,F_in], b: [F_out].
template <typename T>
Tensor<T> linear_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

template <typename T>
struct LinearGrads {
  Tensor<T> x;
  Tensor<T> w;
  Tensor<T> b;
};

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& grad_out, const Tensor<T>& x, const Tensor<T>& w);

/// Row-wise softmax of [N,K] scores, stabilized by subtracting the row max.
template <typename T>
Tensor<T> softmax(const Tensor<T>& scores);

template <typename T>
struct SoftmaxXent {
  double loss = 0.0;
  Tensor<T> grad;   // d loss / d scores
  Tensor<T> probs;
};

/// Mean negative log-likelihood. With class weights the loss is
/// sum_i w[y_i] * nll_i / sum_i w[y_i]; without, grad = (probs - onehot) / N.
template <typename T>
SoftmaxXent<T> softmax_xent(const Tensor<T>& scores, std::span<const int> labels,
                            std::span<const double> class_weights = {});

// ---------------------------------------------------------------------------
// Age encoding
// ---------------------------------------------------------------------------

inline constexpr double kMaxAge = 120.0;

/// Rounds to the nearest half year (halves round away from zero). Throws
/// DataError outside [0, 120].
double round_age(double age);

/// Sinusoidal encoding of the rounded age a:
///   out[2i]   = sin(a / 10000^(2i/d_model))
///   out[2i+1] = cos(a / 10000^(2i/d_model))
template <typename T>
Tensor<T> age_encode(double age, int d_model);

}  // namespace volcnn
