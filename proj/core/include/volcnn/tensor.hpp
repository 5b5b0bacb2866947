#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

#include "volcnn/error.hpp"
#include "volcnn/rng.hpp"

namespace volcnn {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape) noexcept;

/// Dense row-major array of T (float for training, double for gradient checks).
///
/// Invariants: size() == product(shape()), every extent >= 1. A rank-0 tensor
/// holds a single scalar; the default-constructed tensor is the scalar 0.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : data_(1, T{0}) {}
  explicit Tensor(Shape shape, T fill = T{0});
  Tensor(Shape shape, std::vector<T> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* ptr() noexcept { return data_.data(); }
  const T* ptr() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  std::size_t offset(std::span<const std::size_t> index) const;
  T& at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }
  const T& at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }

  /// Same values under a new shape with equal element count.
  Tensor reshaped(Shape shape) const;
  void reshape(Shape shape);
  void fill(T value);

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// Elementwise arithmetic. Shapes must match exactly; there is no broadcasting.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> add(const Tensor<T>& a, T b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> max_scalar(const Tensor<T>& a, T floor);

/// In-place a += factor * b (used for gradient accumulation).
template <typename T> void axpy(Tensor<T>& a, T factor, const Tensor<T>& b);

/// [M,K] x [K,N] -> [M,N].
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

enum class ReduceOp { kSum, kMean, kMax, kArgmax };

/// Reduces over `axes`. Reduced axes are dropped, or kept with extent 1 when
/// keepdims is set. An empty axis set returns the input unchanged. kArgmax
/// yields the row-major position of the first maximum inside each reduced block.
template <typename T>
Tensor<T> reduce(ReduceOp op, const Tensor<T>& x, const std::vector<std::size_t>& axes,
                 bool keepdims = false);

template <typename T>
struct MaxReduction {
  Tensor<T> values;
  std::vector<std::size_t> argmax;
};

template <typename T>
MaxReduction<T> reduce_max(const Tensor<T>& x, const std::vector<std::size_t>& axes,
                           bool keepdims = false);

enum class InitKind { kKaimingUniform, kZeros, kOnes, kUniform };

/// Fresh tensor of `shape`. Kaiming-uniform draws from U(-b, b) with
/// b = sqrt(6 / fan_in), fan_in = product of all extents after the first.
/// kUniform draws from U(lo, hi).
template <typename T>
Tensor<T> init(InitKind kind, const Shape& shape, Rng& rng, double lo = 0.0, double hi = 1.0);

}  // namespace volcnn
