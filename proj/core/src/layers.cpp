#include <algorithm>
#include <cmath>
#include <string>

#include "eigen_maps.hpp"
#include "volcnn/ops.hpp"

namespace volcnn {

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return max_scalar(x, T{0});
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& x) {
  if (grad_out.shape() != x.shape()) {
    throw ShapeError("relu_backward: grad_out " + shape_to_string(grad_out.shape()) +
                     " vs input " + shape_to_string(x.shape()));
  }
  Tensor<T> gx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) gx[i] = x[i] > T{0} ? grad_out[i] : T{0};
  return gx;
}

namespace {

template <typename T>
void check_linear(const Tensor<T>& x, const Tensor<T>& w) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1)) {
    throw ShapeError("linear: input " + shape_to_string(x.shape()) + " incompatible with weight " +
                     shape_to_string(w.shape()));
  }
}

}  // namespace

template <typename T>
Tensor<T> linear_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  check_linear(x, w);
  if (b.shape() != Shape{w.dim(0)}) {
    throw ShapeError("linear: bias " + shape_to_string(b.shape()) + " for weight " +
                     shape_to_string(w.shape()));
  }
  const auto n = static_cast<Eigen::Index>(x.dim(0));
  const auto fin = static_cast<Eigen::Index>(x.dim(1));
  const auto fout = static_cast<Eigen::Index>(w.dim(0));
  Tensor<T> y({x.dim(0), w.dim(0)});
  detail::MatMap<T> ym(y.ptr(), n, fout);
  ym.noalias() = detail::ConstMatMap<T>(x.ptr(), n, fin) *
                 detail::ConstMatMap<T>(w.ptr(), fout, fin).transpose();
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index c = 0; c < fout; ++c) ym(r, c) += b[static_cast<std::size_t>(c)];
  }
  return y;
}

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& grad_out, const Tensor<T>& x, const Tensor<T>& w) {
  check_linear(x, w);
  if (grad_out.shape() != Shape{x.dim(0), w.dim(0)}) {
    throw ShapeError("linear_backward: grad_out " + shape_to_string(grad_out.shape()) +
                     " does not match output [" + std::to_string(x.dim(0)) + "," +
                     std::to_string(w.dim(0)) + "]");
  }
  const auto n = static_cast<Eigen::Index>(x.dim(0));
  const auto fin = static_cast<Eigen::Index>(x.dim(1));
  const auto fout = static_cast<Eigen::Index>(w.dim(0));
  detail::ConstMatMap<T> g(grad_out.ptr(), n, fout);
  LinearGrads<T> grads{Tensor<T>(x.shape()), Tensor<T>(w.shape()), Tensor<T>(Shape{w.dim(0)})};
  detail::MatMap<T>(grads.x.ptr(), n, fin).noalias() = g * detail::ConstMatMap<T>(w.ptr(), fout, fin);
  detail::MatMap<T>(grads.w.ptr(), fout, fin).noalias() =
      g.transpose() * detail::ConstMatMap<T>(x.ptr(), n, fin);
  for (Eigen::Index c = 0; c < fout; ++c) {
    double acc = 0.0;
    for (Eigen::Index r = 0; r < n; ++r) acc += g(r, c);
    grads.b[static_cast<std::size_t>(c)] = static_cast<T>(acc);
  }
  return grads;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& scores) {
  if (scores.rank() != 2) {
    throw ShapeError("softmax expects [N,K], got " + shape_to_string(scores.shape()));
  }
  const std::size_t n = scores.dim(0), k = scores.dim(1);
  Tensor<T> probs(scores.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = scores.ptr() + r * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) z += std::exp(row[c] - mx);
    for (std::size_t c = 0; c < k; ++c) probs[r * k + c] = static_cast<T>(std::exp(row[c] - mx) / z);
  }
  return probs;
}

template <typename T>
SoftmaxXent<T> softmax_xent(const Tensor<T>& scores, std::span<const int> labels,
                            std::span<const double> class_weights) {
  if (scores.rank() != 2 || labels.size() != scores.dim(0)) {
    throw ShapeError("softmax_xent: scores " + shape_to_string(scores.shape()) + " with " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = scores.dim(0), k = scores.dim(1);
  if (!class_weights.empty() && class_weights.size() != k) {
    throw ShapeError("softmax_xent: " + std::to_string(class_weights.size()) +
                     " class weights for " + std::to_string(k) + " classes");
  }
  SoftmaxXent<T> r{0.0, Tensor<T>(scores.shape()), Tensor<T>(scores.shape())};
  double total_weight = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw DataError(DataErrorKind::kBadValue,
                      "label " + std::to_string(labels[i]) + " outside [0," + std::to_string(k) + ")");
    }
    total_weight += class_weights.empty() ? 1.0 : class_weights[labels[i]];
  }
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = scores.ptr() + i * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) z += std::exp(row[c] - mx);
    const double log_z = std::log(z) + mx;
    const auto y = static_cast<std::size_t>(labels[i]);
    const double wi = (class_weights.empty() ? 1.0 : class_weights[y]) / total_weight;
    r.loss += wi * (log_z - row[y]);
    for (std::size_t c = 0; c < k; ++c) {
      const double p = std::exp(row[c] - log_z);
      r.probs[i * k + c] = static_cast<T>(p);
      r.grad[i * k + c] = static_cast<T>(wi * (p - (c == y ? 1.0 : 0.0)));
    }
  }
  return r;
}

double round_age(double age) {
  if (!(age >= 0.0 && age <= kMaxAge)) {
    throw DataError(DataErrorKind::kBadValue,
                    "age " + std::to_string(age) + " outside [0, " + std::to_string(kMaxAge) + "]");
  }
  return std::round(age * 2.0) / 2.0;
}

template <typename T>
Tensor<T> age_encode(double age, int d_model) {
  if (d_model <= 0 || d_model % 2 != 0) {
    throw ConfigError("age encoding width must be a positive even number, got " +
                      std::to_string(d_model));
  }
  const double a = round_age(age);
  Tensor<T> out(Shape{static_cast<std::size_t>(d_model)});
  for (int i = 0; i < d_model / 2; ++i) {
    const double freq = std::pow(10000.0, 2.0 * i / d_model);
    out[2 * i] = static_cast<T>(std::sin(a / freq));
    out[2 * i + 1] = static_cast<T>(std::cos(a / freq));
  }
  return out;
}

#define VOLCNN_INSTANTIATE(T)                                                                  \
  template Tensor<T> relu(const Tensor<T>&);                                                  \
  template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> linear_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);    \
  template LinearGrads<T> linear_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> softmax(const Tensor<T>&);                                               \
  template SoftmaxXent<T> softmax_xent(const Tensor<T>&, std::span<const int>,                \
                                       std::span<const double>);                              \
  template Tensor<T> age_encode<T>(double, int);

VOLCNN_INSTANTIATE(float)
VOLCNN_INSTANTIATE(double)

#undef VOLCNN_INSTANTIATE

}  // namespace volcnn
