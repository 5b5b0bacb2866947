#include <algorithm>
#include <string>

#include "eigen_maps.hpp"
#include "volcnn/ops.hpp"
#include "volcnn/parallel.hpp"

namespace volcnn {

void ConvSpec::validate() const {
  if (kernel < 1 || out_channels < 1 || stride < 1 || dilation < 1 || padding < 0) {
    throw ShapeError("invalid conv spec k" + std::to_string(kernel) + "-c" +
                     std::to_string(out_channels) + "-p" + std::to_string(padding) + "-s" +
                     std::to_string(stride) + "-d" + std::to_string(dilation));
  }
}

std::optional<std::size_t> conv_output_extent(std::size_t in, const ConvSpec& spec) {
  const long padded = static_cast<long>(in) + 2L * spec.padding;
  const long eff = spec.effective_kernel();
  if (eff > padded) return std::nullopt;
  return static_cast<std::size_t>((padded - eff) / spec.stride + 1);
}

namespace {

struct Ext3 {
  std::size_t d, h, w;
  std::size_t volume() const { return d * h * w; }
};

constexpr std::size_t kColsBudget = std::size_t{1} << 20;

struct ConvGeometry {
  std::size_t n, c_in, c_out, k;
  Ext3 in, out;
  std::size_t rows() const { return c_in * k * k * k; }
};

template <typename T>
ConvGeometry check_conv(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                        const ConvSpec& spec) {
  spec.validate();
  if (x.rank() != 5) throw ShapeError("conv3d input must be [N,C,D,H,W], got " + shape_to_string(x.shape()));
  const auto k = static_cast<std::size_t>(spec.kernel);
  const Shape expect_w{static_cast<std::size_t>(spec.out_channels), x.dim(1), k, k, k};
  if (w.shape() != expect_w) {
    throw ShapeError("conv3d weight shape " + shape_to_string(w.shape()) + " does not match " +
                     shape_to_string(expect_w) + " (channel mismatch or spec disagreement)");
  }
  if (b.shape() != Shape{expect_w[0]}) {
    throw ShapeError("conv3d bias shape " + shape_to_string(b.shape()) + " expected [" +
                     std::to_string(expect_w[0]) + "]");
  }
  ConvGeometry g{x.dim(0), x.dim(1), expect_w[0], k, {x.dim(2), x.dim(3), x.dim(4)}, {0, 0, 0}};
  auto od = conv_output_extent(g.in.d, spec), oh = conv_output_extent(g.in.h, spec),
       ow = conv_output_extent(g.in.w, spec);
  if (!od || !oh || !ow) {
    throw ShapeError("conv3d effective kernel " + std::to_string(spec.effective_kernel()) +
                     " exceeds padded input " + shape_to_string(x.shape()) + " with padding " +
                     std::to_string(spec.padding));
  }
  g.out = {*od, *oh, *ow};
  return g;
}

bool is_pointwise(const ConvSpec& s) {
  return s.kernel == 1 && s.stride == 1 && s.padding == 0;
}

// Input coordinates of the first kernel tap for each output position in a tile.
struct TileBase {
  std::vector<long> d, h, w;
};

void tile_base(const ConvGeometry& g, const ConvSpec& s, std::size_t p0, std::size_t np,
               TileBase& tb) {
  tb.d.resize(np);
  tb.h.resize(np);
  tb.w.resize(np);
  const std::size_t hw = g.out.h * g.out.w;
  for (std::size_t j = 0; j < np; ++j) {
    const std::size_t p = p0 + j;
    const std::size_t od = p / hw, rem = p % hw;
    tb.d[j] = static_cast<long>(od) * s.stride - s.padding;
    tb.h[j] = static_cast<long>(rem / g.out.w) * s.stride - s.padding;
    tb.w[j] = static_cast<long>(rem % g.out.w) * s.stride - s.padding;
  }
}

// Visits (row pointer, input element) pairs of the unrolled column matrix.
// Row r = ((c*k + kd)*k + kh)*k + kw, matching the weight layout.
template <typename Ptr, typename F>
void for_each_tap(const ConvGeometry& g, const ConvSpec& s, const TileBase& tb, std::size_t np,
                  Ptr cols, F f) {
  const long D = static_cast<long>(g.in.d), H = static_cast<long>(g.in.h),
             W = static_cast<long>(g.in.w);
  std::size_t r = 0;
  for (std::size_t c = 0; c < g.c_in; ++c) {
    const std::size_t cbase = c * g.in.volume();
    for (std::size_t kd = 0; kd < g.k; ++kd) {
      const long offd = static_cast<long>(kd) * s.dilation;
      for (std::size_t kh = 0; kh < g.k; ++kh) {
        const long offh = static_cast<long>(kh) * s.dilation;
        for (std::size_t kw = 0; kw < g.k; ++kw, ++r) {
          const long offw = static_cast<long>(kw) * s.dilation;
          Ptr row = cols + r * np;
          for (std::size_t j = 0; j < np; ++j) {
            const long id = tb.d[j] + offd, ih = tb.h[j] + offh, iw = tb.w[j] + offw;
            const bool inside = id >= 0 && id < D && ih >= 0 && ih < H && iw >= 0 && iw < W;
            f(row[j], inside, cbase + static_cast<std::size_t>((id * H + ih) * W + iw));
          }
        }
      }
    }
  }
}

template <typename T>
void im2col(const T* x, const ConvGeometry& g, const ConvSpec& s, const TileBase& tb,
            std::size_t np, T* cols) {
  for_each_tap(g, s, tb, np, cols, [x](T& slot, bool inside, std::size_t off) {
    slot = inside ? x[off] : T{0};
  });
}

template <typename T>
void col2im(const T* cols, const ConvGeometry& g, const ConvSpec& s, const TileBase& tb,
            std::size_t np, T* gx) {
  for_each_tap(g, s, tb, np, cols, [gx](const T& slot, bool inside, std::size_t off) {
    if (inside) gx[off] += slot;
  });
}

std::size_t tile_width(const ConvGeometry& g) {
  const std::size_t p = g.out.volume();
  return std::clamp<std::size_t>(kColsBudget / g.rows(), 1, p);
}

}  // namespace

template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                         const ConvSpec& spec) {
  const ConvGeometry g = check_conv(x, w, b, spec);
  const std::size_t P = g.out.volume(), K = g.rows();
  Tensor<T> out({g.n, g.c_out, g.out.d, g.out.h, g.out.w});
  const auto c_out = static_cast<Eigen::Index>(g.c_out);
  detail::ConstMatMap<T> wm(w.ptr(), c_out, static_cast<Eigen::Index>(K));

  parallel_for(g.n, [&](std::size_t n) {
    const T* xn = x.ptr() + n * g.c_in * g.in.volume();
    T* on = out.ptr() + n * g.c_out * P;
    if (is_pointwise(spec)) {
      detail::MatMap<T>(on, c_out, static_cast<Eigen::Index>(P)).noalias() =
          wm * detail::ConstMatMap<T>(xn, static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
    } else {
      const std::size_t tw = tile_width(g);
      std::vector<T> cols(K * tw);
      TileBase tb;
      for (std::size_t p0 = 0; p0 < P; p0 += tw) {
        const std::size_t np = std::min(tw, P - p0);
        tile_base(g, spec, p0, np, tb);
        im2col(xn, g, spec, tb, np, cols.data());
        detail::StridedMap<T>(on + p0, c_out, static_cast<Eigen::Index>(np),
                              Eigen::OuterStride<>(static_cast<Eigen::Index>(P)))
            .noalias() = wm * detail::ConstMatMap<T>(cols.data(), static_cast<Eigen::Index>(K),
                                                     static_cast<Eigen::Index>(np));
      }
    }
    for (std::size_t c = 0; c < g.c_out; ++c) {
      T* row = on + c * P;
      const T bias = b[c];
      for (std::size_t p = 0; p < P; ++p) row[p] += bias;
    }
  });
  return out;
}

template <typename T>
ConvGrads<T> conv3d_backward(const Tensor<T>& grad_out, const Tensor<T>& x, const Tensor<T>& w,
                             const ConvSpec& spec, bool need_input_grad) {
  const Tensor<T> dummy_b(Shape{static_cast<std::size_t>(spec.out_channels)});
  const ConvGeometry g = check_conv(x, w, dummy_b, spec);
  const Shape expect_out{g.n, g.c_out, g.out.d, g.out.h, g.out.w};
  if (grad_out.shape() != expect_out) {
    throw ShapeError("conv3d_backward grad_out shape " + shape_to_string(grad_out.shape()) +
                     " does not match forward output " + shape_to_string(expect_out));
  }
  const std::size_t P = g.out.volume(), K = g.rows();
  const auto c_out = static_cast<Eigen::Index>(g.c_out);
  const auto rows = static_cast<Eigen::Index>(K);
  detail::ConstMatMap<T> wm(w.ptr(), c_out, rows);

  ConvGrads<T> grads{need_input_grad ? Tensor<T>(x.shape()) : Tensor<T>(), Tensor<T>(w.shape()),
                     Tensor<T>(dummy_b.shape())};

  // Per-sample weight gradients are summed in sample order afterwards so the
  // result does not depend on the worker count.
  const bool threaded = num_threads() > 1 && g.n > 1;
  std::vector<Tensor<T>> per_sample(threaded ? g.n : 1, Tensor<T>(w.shape()));

  auto sample_grad = [&](std::size_t n, Tensor<T>& gw_n) {
    const T* xn = x.ptr() + n * g.c_in * g.in.volume();
    const T* gn = grad_out.ptr() + n * g.c_out * P;
    T* gxn = need_input_grad ? grads.x.ptr() + n * g.c_in * g.in.volume() : nullptr;
    detail::MatMap<T> gw(gw_n.ptr(), c_out, rows);
    if (is_pointwise(spec)) {
      detail::ConstMatMap<T> gmat(gn, c_out, static_cast<Eigen::Index>(P));
      detail::ConstMatMap<T> xmat(xn, rows, static_cast<Eigen::Index>(P));
      gw.noalias() = gmat * xmat.transpose();
      if (gxn) {
        detail::MatMap<T>(gxn, rows, static_cast<Eigen::Index>(P)).noalias() =
            wm.transpose() * gmat;
      }
      return;
    }
    gw.setZero();
    const std::size_t tw = tile_width(g);
    std::vector<T> cols(K * tw);
    std::vector<T> gcols(gxn ? K * tw : 0);
    TileBase tb;
    for (std::size_t p0 = 0; p0 < P; p0 += tw) {
      const std::size_t np = std::min(tw, P - p0);
      const auto enp = static_cast<Eigen::Index>(np);
      tile_base(g, spec, p0, np, tb);
      im2col(xn, g, spec, tb, np, cols.data());
      detail::ConstStridedMap<T> gtile(gn + p0, c_out, enp,
                                       Eigen::OuterStride<>(static_cast<Eigen::Index>(P)));
      gw.noalias() += gtile * detail::ConstMatMap<T>(cols.data(), rows, enp).transpose();
      if (gxn) {
        detail::MatMap<T>(gcols.data(), rows, enp).noalias() = wm.transpose() * gtile;
        col2im(gcols.data(), g, spec, tb, np, gxn);
      }
    }
  };

  if (threaded) {
    parallel_for(g.n, [&](std::size_t n) { sample_grad(n, per_sample[n]); });
    for (std::size_t n = 0; n < g.n; ++n) axpy(grads.w, T{1}, per_sample[n]);
  } else {
    for (std::size_t n = 0; n < g.n; ++n) {
      sample_grad(n, per_sample[0]);
      axpy(grads.w, T{1}, per_sample[0]);
    }
  }

  for (std::size_t c = 0; c < g.c_out; ++c) {
    double acc = 0.0;
    for (std::size_t n = 0; n < g.n; ++n) {
      const T* row = grad_out.ptr() + (n * g.c_out + c) * P;
      for (std::size_t p = 0; p < P; ++p) acc += row[p];
    }
    grads.b[c] = static_cast<T>(acc);
  }
  return grads;
}

template Tensor<float> conv3d_forward(const Tensor<float>&, const Tensor<float>&,
                                      const Tensor<float>&, const ConvSpec&);
template Tensor<double> conv3d_forward(const Tensor<double>&, const Tensor<double>&,
                                       const Tensor<double>&, const ConvSpec&);
template ConvGrads<float> conv3d_backward(const Tensor<float>&, const Tensor<float>&,
                                          const Tensor<float>&, const ConvSpec&, bool);
template ConvGrads<double> conv3d_backward(const Tensor<double>&, const Tensor<double>&,
                                           const Tensor<double>&, const ConvSpec&, bool);

}  // namespace volcnn
