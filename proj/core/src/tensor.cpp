#include "volcnn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "eigen_maps.hpp"

namespace volcnn {

std::size_t shape_numel(const Shape& shape) noexcept {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

void check_extents(const Shape& shape) {
  for (std::size_t e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be >= 1, got " + shape_to_string(shape));
  }
}

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
}

template <typename T, typename F>
Tensor<T> map2(const char* op, const Tensor<T>& a, const Tensor<T>& b, F f) {
  require_same_shape(op, a, b);
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

template <typename T, typename F>
Tensor<T> map1(const Tensor<T>& a, F f) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(shape_numel(shape_), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  check_extents(shape_);
  if (data_.size() != shape_numel(shape_)) {
    throw ShapeError("tensor of shape " + shape_to_string(shape_) + " needs " +
                     std::to_string(shape_numel(shape_)) + " values, got " +
                     std::to_string(data_.size()));
  }
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_to_string(shape_));
  }
  return shape_[axis];
}

template <typename T>
std::size_t Tensor<T>::offset(std::span<const std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw ShapeError("index rank " + std::to_string(index.size()) + " does not match shape " +
                     shape_to_string(shape_));
  }
  std::size_t off = 0;
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= shape_[i]) {
      throw ShapeError("index out of range for shape " + shape_to_string(shape_));
    }
    off = off * shape_[i] + index[i];
  }
  return off;
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  Tensor<T> out = *this;
  out.reshape(std::move(shape));
  return out;
}

template <typename T>
void Tensor<T>::reshape(Shape shape) {
  check_extents(shape);
  if (shape_numel(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
  }
  shape_ = std::move(shape);
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return map2("add", a, b, [](T x, T y) { return x + y; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return map2("sub", a, b, [](T x, T y) { return x - y; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return map2("mul", a, b, [](T x, T y) { return x * y; });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, T b) {
  return map1(a, [b](T x) { return x + b; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  return map1(a, [factor](T x) { return x * factor; });
}

template <typename T>
Tensor<T> max_scalar(const Tensor<T>& a, T floor) {
  return map1(a, [floor](T x) { return std::max(x, floor); });
}

template <typename T>
void axpy(Tensor<T>& a, T factor, const Tensor<T>& b) {
  require_same_shape("axpy", a, b);
  T* pa = a.ptr();
  const T* pb = b.ptr();
  for (std::size_t i = 0; i < a.size(); ++i) pa[i] += factor * pb[i];
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul expects rank-2 operands, got " + shape_to_string(a.shape()) + " and " +
                     shape_to_string(b.shape()));
  }
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul inner extents differ: " + shape_to_string(a.shape()) + " x " +
                     shape_to_string(b.shape()));
  }
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  Tensor<T> out({a.dim(0), b.dim(1)});
  detail::MatMap<T>(out.ptr(), m, n).noalias() =
      detail::ConstMatMap<T>(a.ptr(), m, k) * detail::ConstMatMap<T>(b.ptr(), k, n);
  return out;
}

namespace {

struct ReducePlan {
  Shape out_shape;
  std::vector<bool> reduced;
};

ReducePlan plan_reduce(const Shape& shape, const std::vector<std::size_t>& axes, bool keepdims) {
  ReducePlan plan;
  plan.reduced.assign(shape.size(), false);
  for (std::size_t ax : axes) {
    if (ax >= shape.size()) {
      throw ShapeError("reduce axis " + std::to_string(ax) + " out of range for shape " +
                       shape_to_string(shape));
    }
    plan.reduced[ax] = true;
  }
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (!plan.reduced[i]) {
      plan.out_shape.push_back(shape[i]);
    } else if (keepdims) {
      plan.out_shape.push_back(1);
    }
  }
  return plan;
}

// Visits every input element in row-major order with (output index, position
// inside its reduced block).
template <typename F>
void for_each_reduced(const Shape& shape, const std::vector<bool>& reduced, F f) {
  const std::size_t rank = shape.size();
  std::vector<std::size_t> idx(rank, 0);
  // Row-major strides in the kept-axes output space and reduced-axes block space.
  std::vector<std::size_t> out_stride(rank, 0), blk_stride(rank, 0);
  std::size_t os = 1, bs = 1;
  for (std::size_t i = rank; i-- > 0;) {
    if (reduced[i]) {
      blk_stride[i] = bs;
      bs *= shape[i];
    } else {
      out_stride[i] = os;
      os *= shape[i];
    }
  }
  const std::size_t total = shape_numel(shape);
  std::size_t out_i = 0, blk_i = 0;
  for (std::size_t flat = 0; flat < total; ++flat) {
    f(flat, out_i, blk_i);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      out_i += out_stride[d];
      blk_i += blk_stride[d];
      if (idx[d] < shape[d]) break;
      out_i -= out_stride[d] * shape[d];
      blk_i -= blk_stride[d] * shape[d];
      idx[d] = 0;
    }
  }
}

}  // namespace

template <typename T>
MaxReduction<T> reduce_max(const Tensor<T>& x, const std::vector<std::size_t>& axes,
                           bool keepdims) {
  if (axes.empty()) {
    return {x, std::vector<std::size_t>(x.size(), 0)};
  }
  const ReducePlan plan = plan_reduce(x.shape(), axes, keepdims);
  MaxReduction<T> r{Tensor<T>(plan.out_shape), {}};
  r.argmax.assign(r.values.size(), 0);
  std::vector<bool> seen(r.values.size(), false);
  for_each_reduced(x.shape(), plan.reduced, [&](std::size_t flat, std::size_t o, std::size_t b) {
    if (!seen[o] || x[flat] > r.values[o]) {
      seen[o] = true;
      r.values[o] = x[flat];
      r.argmax[o] = b;
    }
  });
  return r;
}

template <typename T>
Tensor<T> reduce(ReduceOp op, const Tensor<T>& x, const std::vector<std::size_t>& axes,
                 bool keepdims) {
  if (axes.empty()) {
    if (op == ReduceOp::kArgmax) return Tensor<T>(x.shape(), T{0});
    return x;
  }
  if (op == ReduceOp::kMax || op == ReduceOp::kArgmax) {
    MaxReduction<T> r = reduce_max(x, axes, keepdims);
    if (op == ReduceOp::kMax) return std::move(r.values);
    Tensor<T> idx(r.values.shape());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<T>(r.argmax[i]);
    return idx;
  }
  const ReducePlan plan = plan_reduce(x.shape(), axes, keepdims);
  std::vector<double> acc(shape_numel(plan.out_shape), 0.0);
  for_each_reduced(x.shape(), plan.reduced,
                   [&](std::size_t flat, std::size_t o, std::size_t) { acc[o] += x[flat]; });
  const double count = static_cast<double>(x.size()) / static_cast<double>(acc.size());
  Tensor<T> out(plan.out_shape);
  for (std::size_t i = 0; i < acc.size(); ++i) {
    out[i] = static_cast<T>(op == ReduceOp::kMean ? acc[i] / count : acc[i]);
  }
  return out;
}

template <typename T>
Tensor<T> init(InitKind kind, const Shape& shape, Rng& rng, double lo, double hi) {
  Tensor<T> out(shape);
  switch (kind) {
    case InitKind::kZeros:
      break;
    case InitKind::kOnes:
      out.fill(T{1});
      break;
    case InitKind::kUniform:
      for (T& v : out.data()) v = static_cast<T>(rng.uniform(lo, hi));
      break;
    case InitKind::kKaimingUniform: {
      const std::size_t fan_in = shape.size() > 1 ? out.size() / shape[0] : out.size();
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      for (T& v : out.data()) v = static_cast<T>(rng.uniform(-bound, bound));
      break;
    }
  }
  return out;
}

#define VOLCNN_INSTANTIATE(T)                                                               \
  template class Tensor<T>;                                                                 \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> add(const Tensor<T>&, T);                                              \
  template Tensor<T> scale(const Tensor<T>&, T);                                            \
  template Tensor<T> max_scalar(const Tensor<T>&, T);                                       \
  template void axpy(Tensor<T>&, T, const Tensor<T>&);                                      \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> reduce(ReduceOp, const Tensor<T>&, const std::vector<std::size_t>&, bool); \
  template MaxReduction<T> reduce_max(const Tensor<T>&, const std::vector<std::size_t>&, bool); \
  template Tensor<T> init(InitKind, const Shape&, Rng&, double, double);

VOLCNN_INSTANTIATE(float)
VOLCNN_INSTANTIATE(double)

#undef VOLCNN_INSTANTIATE

}  // namespace volcnn
