#include <string>

#include "volcnn/ops.hpp"

namespace volcnn {

std::optional<std::size_t> pool_output_extent(std::size_t in, const PoolSpec& spec) {
  if (spec.kernel < 1 || spec.stride < 1) return std::nullopt;
  const auto k = static_cast<std::size_t>(spec.kernel);
  if (k > in) return std::nullopt;
  return (in - k) / static_cast<std::size_t>(spec.stride) + 1;
}

template <typename T>
PoolResult<T> maxpool3d_forward(const Tensor<T>& x, const PoolSpec& spec) {
  if (x.rank() != 5) {
    throw ShapeError("maxpool3d input must be [N,C,D,H,W], got " + shape_to_string(x.shape()));
  }
  const std::size_t D = x.dim(2), H = x.dim(3), W = x.dim(4);
  auto od = pool_output_extent(D, spec), oh = pool_output_extent(H, spec),
       ow = pool_output_extent(W, spec);
  if (!od || !oh || !ow) {
    throw ShapeError("maxpool3d window k" + std::to_string(spec.kernel) + "-s" +
                     std::to_string(spec.stride) + " does not fit input " +
                     shape_to_string(x.shape()));
  }
  const std::size_t planes = x.dim(0) * x.dim(1);
  const auto k = static_cast<std::size_t>(spec.kernel), s = static_cast<std::size_t>(spec.stride);
  PoolResult<T> r{Tensor<T>({x.dim(0), x.dim(1), *od, *oh, *ow}), {}};
  r.argmax.resize(r.out.size());
  std::size_t o = 0;
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const std::size_t base = pl * D * H * W;
    for (std::size_t d = 0; d < *od; ++d) {
      for (std::size_t h = 0; h < *oh; ++h) {
        for (std::size_t w = 0; w < *ow; ++w, ++o) {
          std::size_t best = base + ((d * s) * H + h * s) * W + w * s;
          T best_v = x[best];
          for (std::size_t kd = 0; kd < k; ++kd) {
            for (std::size_t kh = 0; kh < k; ++kh) {
              const std::size_t row = base + ((d * s + kd) * H + h * s + kh) * W + w * s;
              for (std::size_t kw = 0; kw < k; ++kw) {
                if (x[row + kw] > best_v) {
                  best_v = x[row + kw];
                  best = row + kw;
                }
              }
            }
          }
          r.out[o] = best_v;
          r.argmax[o] = best;
        }
      }
    }
  }
  return r;
}

template <typename T>
Tensor<T> maxpool3d_backward(const Tensor<T>& grad_out, std::span<const std::size_t> argmax,
                             const Shape& input_shape) {
  if (argmax.size() != grad_out.size()) {
    throw ShapeError("maxpool3d_backward: " + std::to_string(argmax.size()) +
                     " argmax indices for grad_out " + shape_to_string(grad_out.shape()));
  }
  Tensor<T> gx(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) {
    if (argmax[i] >= gx.size()) {
      throw ShapeError("maxpool3d_backward: argmax index " + std::to_string(argmax[i]) +
                       " out of range for input " + shape_to_string(input_shape));
    }
    gx[argmax[i]] += grad_out[i];
  }
  return gx;
}

template PoolResult<float> maxpool3d_forward(const Tensor<float>&, const PoolSpec&);
template PoolResult<double> maxpool3d_forward(const Tensor<double>&, const PoolSpec&);
template Tensor<float> maxpool3d_backward(const Tensor<float>&, std::span<const std::size_t>,
                                          const Shape&);
template Tensor<double> maxpool3d_backward(const Tensor<double>&, std::span<const std::size_t>,
                                           const Shape&);

}  // namespace volcnn
