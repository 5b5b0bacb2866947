#include "volcnn/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "volcnn/data.hpp"

namespace volcnn {

namespace fs = std::filesystem;

template <typename T>
Tensor<T> saliency_gradient(const Network<T>& net, const Tensor<T>& volume, int target, double age) {
  if (target < 0 || target >= net.config().num_classes) {
    throw ConfigError("target class " + std::to_string(target) + " out of range");
  }
  const std::size_t r = volume.rank();
  if (r < 3 || volume.size() != volume.dim(r - 3) * volume.dim(r - 2) * volume.dim(r - 1)) {
    throw ShapeError("saliency expects a single volume, got " + shape_to_string(volume.shape()));
  }
  const Shape dhw{volume.dim(r - 3), volume.dim(r - 2), volume.dim(r - 1)};
  const Tensor<T> x = volume.reshaped({1, 1, dhw[0], dhw[1], dhw[2]});
  const double ages[1] = {age};
  const std::span<const double> age_span =
      net.config().age_mode == AgeMode::kNone ? std::span<const double>{} : std::span<const double>(ages);
  ForwardResult<T> fr = forward(net, x, age_span);
  Tensor<T> seed(fr.logits.shape());
  seed[static_cast<std::size_t>(target)] = T{1};
  Gradients<T> g = backward(net, fr.tape, seed, true);
  Tensor<T> out = g.input.reshaped(dhw);
  for (T& v : out.data()) v = std::abs(v);
  return out;
}

template Tensor<float> saliency_gradient(const Network<float>&, const Tensor<float>&, int, double);
template Tensor<double> saliency_gradient(const Network<double>&, const Tensor<double>&, int, double);

SaliencyMap saliency(const Network<float>& net, const Tensor<float>& volume, int target, double age) {
  return {saliency_gradient(net, volume, target, age), target, 0.0};
}

SaliencyMap aggregate(const std::vector<SaliencyMap>& maps) {
  if (maps.empty()) throw ConfigError("cannot aggregate an empty list of saliency maps");
  const Shape& shape = maps.front().values.shape();
  Tensor<double> sum(shape);
  for (const auto& m : maps) {
    if (m.values.shape() != shape) {
      throw ShapeError("saliency map " + shape_to_string(m.values.shape()) + " does not match " +
                       shape_to_string(shape));
    }
    const float mx = *std::max_element(m.values.data().begin(), m.values.data().end());
    if (mx <= 0.0f) continue;
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += static_cast<double>(m.values[i]) / mx;
  }
  SaliencyMap out{Tensor<float>(shape), -1, 0.0};
  for (std::size_t i = 0; i < sum.size(); ++i) {
    out.values[i] = static_cast<float>(sum[i] / static_cast<double>(maps.size()));
  }
  return out;
}

SaliencyMap smooth(const SaliencyMap& map, double sigma) {
  SaliencyMap out{gaussian_blur(map.values, sigma), map.target, sigma};
  for (float& v : out.values.data()) v = std::max(v, 0.0f);
  return out;
}

std::string_view to_string(SliceAxis axis) {
  switch (axis) {
    case SliceAxis::kAxial: return "axial";
    case SliceAxis::kCoronal: return "coronal";
    case SliceAxis::kSagittal: return "sagittal";
  }
  return "?";
}

SliceAxis parse_slice_axis(std::string_view text) {
  for (SliceAxis a : {SliceAxis::kAxial, SliceAxis::kCoronal, SliceAxis::kSagittal}) {
    if (text == to_string(a)) return a;
  }
  throw ConfigError("unknown slice axis '" + std::string(text) + "' (axial|coronal|sagittal)");
}

std::vector<SliceView> default_views() {
  return {{SliceAxis::kAxial, 50}, {SliceAxis::kAxial, 26}, {SliceAxis::kCoronal, 56}, {SliceAxis::kSagittal, 26}};
}

std::vector<SliceView> parse_views(std::string_view text) {
  std::vector<SliceView> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find(',', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view item = text.substr(pos, end - pos);
    pos = end + 1;
    if (item.empty()) continue;
    const std::size_t digit = item.find_first_of("0123456789");
    if (digit == std::string_view::npos || digit == 0) {
      throw ConfigError("view '" + std::string(item) + "' must look like axial50");
    }
    SliceView v;
    v.axis = parse_slice_axis(item.substr(0, digit));
    const std::string num(item.substr(digit));
    if (num.find_first_not_of("0123456789") != std::string::npos) {
      throw ConfigError("view '" + std::string(item) + "' has a malformed index");
    }
    v.index = std::stoul(num);
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("no views given");
  return out;
}

std::string format_views(const std::vector<SliceView>& views) {
  std::string out;
  for (const auto& v : views) {
    if (!out.empty()) out += ',';
    out += std::string(to_string(v.axis)) + std::to_string(v.index);
  }
  return out;
}

Tensor<float> extract_slice(const Tensor<float>& map, SliceView view) {
  if (map.rank() != 3) throw ShapeError("slice export expects a [D,H,W] map, got " + shape_to_string(map.shape()));
  const std::size_t d = map.dim(0), h = map.dim(1), w = map.dim(2);
  const std::size_t limit = view.axis == SliceAxis::kAxial ? d : view.axis == SliceAxis::kCoronal ? h : w;
  if (view.index >= limit) {
    throw ShapeError(std::string(to_string(view.axis)) + " index " + std::to_string(view.index) +
                     " out of range for map " + shape_to_string(map.shape()));
  }
  const std::size_t i = view.index;
  switch (view.axis) {
    case SliceAxis::kAxial: {
      Tensor<float> s({h, w});
      std::copy_n(map.ptr() + i * h * w, h * w, s.ptr());
      return s;
    }
    case SliceAxis::kCoronal: {
      Tensor<float> s({d, w});
      for (std::size_t z = 0; z < d; ++z) std::copy_n(map.ptr() + (z * h + i) * w, w, s.ptr() + z * w);
      return s;
    }
    case SliceAxis::kSagittal: {
      Tensor<float> s({d, h});
      for (std::size_t z = 0; z < d; ++z) {
        for (std::size_t y = 0; y < h; ++y) s[z * h + y] = map[(z * h + y) * w + i];
      }
      return s;
    }
  }
  return {};
}

void write_pgm(const fs::path& path, const Tensor<float>& slice) {
  if (slice.rank() != 2) throw ShapeError("PGM export expects a 2-D slice");
  const std::size_t rows = slice.dim(0), cols = slice.dim(1);
  const auto [lo_it, hi_it] = std::minmax_element(slice.data().begin(), slice.data().end());
  const double lo = *lo_it, hi = *hi_it;
  std::vector<unsigned char> pixels(slice.size(), 0);
  if (hi > lo) {
    for (std::size_t i = 0; i < slice.size(); ++i) {
      pixels[i] = static_cast<unsigned char>(std::lround(255.0 * (slice[i] - lo) / (hi - lo)));
    }
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError(DataErrorKind::kIo, "cannot write " + path.string());
  os << "P5\n" << cols << ' ' << rows << "\n255\n";
  os.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!os) throw DataError(DataErrorKind::kIo, "write failed for " + path.string());
}

std::vector<fs::path> export_slices(const SaliencyMap& map, const std::vector<SliceView>& views,
                                    const std::string& prefix) {
  std::vector<Tensor<float>> slices;
  for (const auto& v : views) slices.push_back(extract_slice(map.values, v));  // validate all first
  std::vector<fs::path> out;
  for (std::size_t k = 0; k < views.size(); ++k) {
    fs::path p = prefix + "_" + std::string(to_string(views[k].axis)) + std::to_string(views[k].index) + ".pgm";
    write_pgm(p, slices[k]);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace volcnn
