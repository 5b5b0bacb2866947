#include <cmath>

#include "volcnn/data.hpp"

namespace volcnn {

namespace {

// Blurs along one axis of a volume viewed as [outer, n, inner].
template <typename T>
void blur_axis(const T* src, T* dst, std::size_t outer, std::size_t n, std::size_t inner,
               const std::vector<double>& kernel) {
  const auto radius = static_cast<std::ptrdiff_t>(kernel.size() / 2);
  const auto len = static_cast<std::ptrdiff_t>(n);
  for (std::size_t o = 0; o < outer; ++o) {
    const T* s = src + o * n * inner;
    T* d = dst + o * n * inner;
    for (std::ptrdiff_t i = 0; i < len; ++i) {
      const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, i - radius);
      const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(len - 1, i + radius);
      double wsum = 0.0;
      for (std::ptrdiff_t j = lo; j <= hi; ++j) wsum += kernel[static_cast<std::size_t>(j - i + radius)];
      for (std::size_t k = 0; k < inner; ++k) {
        double acc = 0.0;
        for (std::ptrdiff_t j = lo; j <= hi; ++j) {
          acc += kernel[static_cast<std::size_t>(j - i + radius)] *
                 static_cast<double>(s[static_cast<std::size_t>(j) * inner + k]);
        }
        d[static_cast<std::size_t>(i) * inner + k] = static_cast<T>(acc / wsum);
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> gaussian_blur(const Tensor<T>& volume, double sigma) {
  if (!(sigma >= 0.0)) throw ConfigError("blur sigma must be >= 0");
  if (volume.rank() < 3) throw ShapeError("blur needs at least 3 axes, got " + shape_to_string(volume.shape()));
  const auto radius = static_cast<std::size_t>(std::ceil(3.0 * sigma));
  if (sigma == 0.0 || radius == 0) return volume;
  std::vector<double> kernel(2 * radius + 1);
  for (std::size_t i = 0; i < kernel.size(); ++i) {
    const double x = static_cast<double>(i) - static_cast<double>(radius);
    kernel[i] = std::exp(-x * x / (2.0 * sigma * sigma));
  }
  const std::size_t r = volume.rank();
  const std::size_t d = volume.dim(r - 3), h = volume.dim(r - 2), w = volume.dim(r - 1);
  const std::size_t batch = volume.size() / (d * h * w);
  Tensor<T> a = volume, b(volume.shape());
  blur_axis(a.ptr(), b.ptr(), batch, d, h * w, kernel);
  blur_axis(b.ptr(), a.ptr(), batch * d, h, w, kernel);
  blur_axis(a.ptr(), b.ptr(), batch * d * h, w, 1, kernel);
  return b;
}

template Tensor<float> gaussian_blur(const Tensor<float>&, double);
template Tensor<double> gaussian_blur(const Tensor<double>&, double);

Crop crop_at(const Tensor<float>& volume, std::size_t extent, std::array<std::size_t, 3> offset) {
  const std::size_t r = volume.rank();
  if (r < 3) throw ShapeError("crop needs at least 3 axes, got " + shape_to_string(volume.shape()));
  const std::size_t in[3] = {volume.dim(r - 3), volume.dim(r - 2), volume.dim(r - 1)};
  for (int a = 0; a < 3; ++a) {
    if (extent == 0 || offset[a] + extent > in[a]) {
      throw ShapeError("crop of extent " + std::to_string(extent) + " does not fit volume " +
                       shape_to_string(volume.shape()));
    }
  }
  Shape shape = volume.shape();
  shape[r - 3] = shape[r - 2] = shape[r - 1] = extent;
  Crop c{Tensor<float>(shape), offset};
  const std::size_t batch = volume.size() / (in[0] * in[1] * in[2]);
  float* dst = c.volume.ptr();
  for (std::size_t n = 0; n < batch; ++n) {
    const float* src = volume.ptr() + n * in[0] * in[1] * in[2];
    for (std::size_t z = 0; z < extent; ++z) {
      for (std::size_t y = 0; y < extent; ++y) {
        const float* row = src + ((z + offset[0]) * in[1] + y + offset[1]) * in[2] + offset[2];
        dst = std::copy_n(row, extent, dst);
      }
    }
  }
  return c;
}

Crop random_crop(const Tensor<float>& volume, std::size_t extent, Rng& rng) {
  const std::size_t r = volume.rank();
  if (r < 3) throw ShapeError("crop needs at least 3 axes, got " + shape_to_string(volume.shape()));
  std::array<std::size_t, 3> offset{};
  for (std::size_t a = 0; a < 3; ++a) {
    const std::size_t in = volume.dim(r - 3 + a);
    if (extent == 0 || extent > in) {
      throw ShapeError("crop of extent " + std::to_string(extent) + " does not fit volume " +
                       shape_to_string(volume.shape()));
    }
    offset[a] = static_cast<std::size_t>(rng.below(in - extent + 1));
  }
  return crop_at(volume, extent, offset);
}

Crop center_crop(const Tensor<float>& volume, std::size_t extent) {
  const std::size_t r = volume.rank();
  if (r < 3) throw ShapeError("crop needs at least 3 axes, got " + shape_to_string(volume.shape()));
  std::array<std::size_t, 3> offset{};
  for (std::size_t a = 0; a < 3; ++a) {
    const std::size_t in = volume.dim(r - 3 + a);
    offset[a] = in >= extent ? (in - extent) / 2 : 0;
  }
  return crop_at(volume, extent, offset);
}

Tensor<float> intensity_normalize(const Tensor<float>& volume) {
  double mean = 0.0;
  for (float v : volume.data()) mean += v;
  mean /= static_cast<double>(volume.size());
  double var = 0.0;
  for (float v : volume.data()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(volume.size());
  const double sd = std::sqrt(var);
  if (!(sd > 0.0) || sd < 1e-12 * std::max(1.0, std::abs(mean))) {
    throw DataError(DataErrorKind::kBadValue, "cannot z-score a constant volume");
  }
  Tensor<float> out(volume.shape());
  for (std::size_t i = 0; i < volume.size(); ++i) out[i] = static_cast<float>((volume[i] - mean) / sd);
  return out;
}

}  // namespace volcnn
