#include <cmath>
#include <string>

#include "volcnn/ops.hpp"

namespace volcnn {

namespace {

// How normalization groups map onto the flat tensor. `offset(g, j)` is the
// flat index of the j-th element of group g; `param(g, j)` indexes gamma/beta.
struct InstanceLayout {
  std::size_t groups, size, channels;
  std::size_t offset(std::size_t g, std::size_t j) const { return g * size + j; }
  std::size_t param(std::size_t g, std::size_t) const { return g % channels; }
};

struct BatchLayout {
  std::size_t groups, size, channels, spatial;
  std::size_t offset(std::size_t g, std::size_t j) const {
    return ((j / spatial) * channels + g) * spatial + j % spatial;
  }
  std::size_t param(std::size_t g, std::size_t) const { return g; }
};

struct LayerLayout {
  std::size_t groups, size;
  std::size_t offset(std::size_t g, std::size_t j) const { return g * size + j; }
  std::size_t param(std::size_t, std::size_t j) const { return j; }
};

std::size_t spatial_volume(const Shape& s) {
  std::size_t v = 1;
  for (std::size_t i = 2; i < s.size(); ++i) v *= s[i];
  return v;
}

template <typename T>
void check_affine(const char* op, const Tensor<T>& gamma, const Tensor<T>& beta, std::size_t n) {
  if (gamma.shape() != Shape{n} || beta.shape() != Shape{n}) {
    throw ShapeError(std::string(op) + ": gamma/beta must be [" + std::to_string(n) + "], got " +
                     shape_to_string(gamma.shape()) + " and " + shape_to_string(beta.shape()));
  }
}

// Normalizes each group with its own statistics.
template <typename T, typename Layout>
void normalize_groups(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      const Layout& layout, double eps, NormOutput<T>& out,
                      std::vector<double>* means = nullptr, std::vector<double>* vars = nullptr) {
  out.y = Tensor<T>(x.shape());
  out.state.xhat = Tensor<T>(x.shape());
  out.state.inv_std.resize(layout.groups);
  for (std::size_t g = 0; g < layout.groups; ++g) {
    double sum = 0.0;
    for (std::size_t j = 0; j < layout.size; ++j) sum += x[layout.offset(g, j)];
    const double mean = sum / static_cast<double>(layout.size);
    double ss = 0.0;
    for (std::size_t j = 0; j < layout.size; ++j) {
      const double d = x[layout.offset(g, j)] - mean;
      ss += d * d;
    }
    const double var = ss / static_cast<double>(layout.size);
    const double inv_std = 1.0 / std::sqrt(var + eps);
    out.state.inv_std[g] = static_cast<T>(inv_std);
    for (std::size_t j = 0; j < layout.size; ++j) {
      const std::size_t o = layout.offset(g, j), pi = layout.param(g, j);
      const T xh = static_cast<T>((x[o] - mean) * inv_std);
      out.state.xhat[o] = xh;
      out.y[o] = gamma[pi] * xh + beta[pi];
    }
    if (means) (*means)[g] = mean;
    if (vars) (*vars)[g] = var;
  }
}

template <typename T, typename Layout>
void backward_groups(const Tensor<T>& grad_out, const NormState<T>& st, const Layout& layout,
                     NormGrads<T>& grads) {
  std::vector<double> dgamma(grads.gamma.size(), 0.0), dbeta(grads.beta.size(), 0.0);
  const double m = static_cast<double>(layout.size);
  for (std::size_t g = 0; g < layout.groups; ++g) {
    double sum_d = 0.0, sum_dx = 0.0;
    for (std::size_t j = 0; j < layout.size; ++j) {
      const std::size_t o = layout.offset(g, j), pi = layout.param(g, j);
      const double go = grad_out[o], xh = st.xhat[o];
      const double dxh = go * static_cast<double>(st.gamma[pi]);
      sum_d += dxh;
      sum_dx += dxh * xh;
      dgamma[pi] += go * xh;
      dbeta[pi] += go;
    }
    const double inv_std = st.inv_std[g];
    const bool batch_stats = !(st.kind == NormKind::kBatch && st.mode == NormMode::kEval);
    for (std::size_t j = 0; j < layout.size; ++j) {
      const std::size_t o = layout.offset(g, j), pi = layout.param(g, j);
      const double dxh = grad_out[o] * static_cast<double>(st.gamma[pi]);
      const double dx = batch_stats ? inv_std * (dxh - sum_d / m - st.xhat[o] * sum_dx / m)
                                    : inv_std * dxh;
      grads.x[o] = static_cast<T>(dx);
    }
  }
  for (std::size_t i = 0; i < dgamma.size(); ++i) {
    grads.gamma[i] = static_cast<T>(dgamma[i]);
    grads.beta[i] = static_cast<T>(dbeta[i]);
  }
}

InstanceLayout instance_layout(const Shape& s) {
  return {s[0] * s[1], spatial_volume(s), s[1]};
}

BatchLayout batch_layout(const Shape& s) {
  const std::size_t sp = spatial_volume(s);
  return {s[1], s[0] * sp, s[1], sp};
}

LayerLayout layer_layout(const Shape& s) {
  const std::size_t f = s.back();
  return {shape_numel(s) / f, f};
}

}  // namespace

template <typename T>
NormOutput<T> instance_norm_forward(const Tensor<T>& x, const Tensor<T>& gamma,
                                    const Tensor<T>& beta, double eps) {
  if (x.rank() < 2) {
    throw ShapeError("instance_norm expects [N,C,...], got " + shape_to_string(x.shape()));
  }
  check_affine("instance_norm", gamma, beta, x.dim(1));
  NormOutput<T> out;
  out.state.kind = NormKind::kInstance;
  out.state.mode = NormMode::kTrain;
  out.state.shape = x.shape();
  out.state.gamma = gamma;
  normalize_groups(x, gamma, beta, instance_layout(x.shape()), eps, out);
  return out;
}

template <typename T>
NormOutput<T> batch_norm_forward(const Tensor<T>& x, const Tensor<T>& gamma,
                                 const Tensor<T>& beta, RunningStats<T>& stats, NormMode mode,
                                 double momentum, double eps) {
  if (x.rank() < 2) {
    throw ShapeError("batch_norm expects [N,C,...], got " + shape_to_string(x.shape()));
  }
  const std::size_t c = x.dim(1);
  check_affine("batch_norm", gamma, beta, c);
  if (stats.mean.shape() != Shape{c} || stats.var.shape() != Shape{c}) {
    throw ShapeError("batch_norm running statistics must be [" + std::to_string(c) + "]");
  }
  NormOutput<T> out;
  out.state.kind = NormKind::kBatch;
  out.state.mode = mode;
  out.state.shape = x.shape();
  out.state.gamma = gamma;
  const BatchLayout layout = batch_layout(x.shape());
  if (mode == NormMode::kTrain) {
    if (x.dim(0) < 2) {
      throw ShapeError("batch_norm in training mode needs a batch of at least 2, got " +
                       std::to_string(x.dim(0)));
    }
    std::vector<double> means(c), vars(c);
    normalize_groups(x, gamma, beta, layout, eps, out, &means, &vars);
    const double m = static_cast<double>(layout.size);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double unbiased = vars[ch] * m / (m - 1.0);
      stats.mean[ch] = static_cast<T>((1.0 - momentum) * stats.mean[ch] + momentum * means[ch]);
      stats.var[ch] = static_cast<T>((1.0 - momentum) * stats.var[ch] + momentum * unbiased);
    }
    return out;
  }
  out.y = Tensor<T>(x.shape());
  out.state.xhat = Tensor<T>(x.shape());
  out.state.inv_std.resize(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double mean = stats.mean[ch];
    const double inv_std = 1.0 / std::sqrt(static_cast<double>(stats.var[ch]) + eps);
    out.state.inv_std[ch] = static_cast<T>(inv_std);
    for (std::size_t j = 0; j < layout.size; ++j) {
      const std::size_t o = layout.offset(ch, j);
      const T xh = static_cast<T>((x[o] - mean) * inv_std);
      out.state.xhat[o] = xh;
      out.y[o] = gamma[ch] * xh + beta[ch];
    }
  }
  return out;
}

template <typename T>
NormOutput<T> layer_norm_forward(const Tensor<T>& x, const Tensor<T>& gamma,
                                 const Tensor<T>& beta, double eps) {
  if (x.rank() < 1) throw ShapeError("layer_norm expects at least one axis");
  check_affine("layer_norm", gamma, beta, x.shape().back());
  NormOutput<T> out;
  out.state.kind = NormKind::kLayer;
  out.state.mode = NormMode::kTrain;
  out.state.shape = x.shape();
  out.state.gamma = gamma;
  normalize_groups(x, gamma, beta, layer_layout(x.shape()), eps, out);
  return out;
}

template <typename T>
NormGrads<T> norm_backward(NormKind kind, const Tensor<T>& grad_out, const NormState<T>& state) {
  if (kind != state.kind) {
    throw ShapeError("norm_backward: saved state belongs to a different normalization variant");
  }
  if (grad_out.shape() != state.shape || state.xhat.shape() != state.shape) {
    throw ShapeError("norm_backward: grad_out shape " + shape_to_string(grad_out.shape()) +
                     " does not match saved state " + shape_to_string(state.shape));
  }
  NormGrads<T> grads{Tensor<T>(state.shape), Tensor<T>(state.gamma.shape()),
                     Tensor<T>(state.gamma.shape())};
  switch (kind) {
    case NormKind::kInstance:
      backward_groups(grad_out, state, instance_layout(state.shape), grads);
      break;
    case NormKind::kBatch:
      backward_groups(grad_out, state, batch_layout(state.shape), grads);
      break;
    case NormKind::kLayer:
      backward_groups(grad_out, state, layer_layout(state.shape), grads);
      break;
  }
  return grads;
}

#define VOLCNN_INSTANTIATE(T)                                                                   \
  template NormOutput<T> instance_norm_forward(const Tensor<T>&, const Tensor<T>&,             \
                                               const Tensor<T>&, double);                      \
  template NormOutput<T> batch_norm_forward(const Tensor<T>&, const Tensor<T>&,                \
                                            const Tensor<T>&, RunningStats<T>&, NormMode,      \
                                            double, double);                                   \
  template NormOutput<T> layer_norm_forward(const Tensor<T>&, const Tensor<T>&,                \
                                            const Tensor<T>&, double);                         \
  template NormGrads<T> norm_backward(NormKind, const Tensor<T>&, const NormState<T>&);

VOLCNN_INSTANTIATE(float)
VOLCNN_INSTANTIATE(double)

#undef VOLCNN_INSTANTIATE

}  // namespace volcnn
