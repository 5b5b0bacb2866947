#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "volcnn/model.hpp"

namespace volcnn {

struct SaliencyMap {
  Tensor<float> values;  // [D,H,W], non-negative
  int target = 0;        // -1 for aggregates
  double sigma = 0.0;    // smoothing applied
};

/// |d score_target / d input| for one volume [1,D,H,W] (or [1,1,D,H,W]),
/// where score is the pre-softmax logit. Evaluation-mode forward pass.
template <typename T>
Tensor<T> saliency_gradient(const Network<T>& net, const Tensor<T>& volume, int target, double age = 0.0);

SaliencyMap saliency(const Network<float>& net, const Tensor<float>& volume, int target, double age = 0.0);

/// Voxelwise mean of the maps after scaling each to max 1 (an all-zero map stays zero).
SaliencyMap aggregate(const std::vector<SaliencyMap>& maps);

inline constexpr double kSaliencySigma = 0.8;
SaliencyMap smooth(const SaliencyMap& map, double sigma = kSaliencySigma);

enum class SliceAxis { kAxial, kCoronal, kSagittal };
std::string_view to_string(SliceAxis axis);
SliceAxis parse_slice_axis(std::string_view text);

struct SliceView {
  SliceAxis axis = SliceAxis::kAxial;
  std::size_t index = 0;
  bool operator==(const SliceView&) const = default;
};

/// Axial 50, axial 26, coronal 56, sagittal 26.
std::vector<SliceView> default_views();
/// "axial50,coronal56" style list.
std::vector<SliceView> parse_views(std::string_view text);
std::string format_views(const std::vector<SliceView>& views);

/// Axial fixes D (image H rows x W columns), coronal fixes H (D x W),
/// sagittal fixes W (D x H).
Tensor<float> extract_slice(const Tensor<float>& map, SliceView view);

/// 8-bit binary PGM, min-max scaled; a constant slice is written as all 0.
void write_pgm(const std::filesystem::path& path, const Tensor<float>& slice);

/// Writes {prefix}_{axis}{index}.pgm per view; returns the paths.
std::vector<std::filesystem::path> export_slices(const SaliencyMap& map, const std::vector<SliceView>& views,
                                                 const std::string& prefix);

}  // namespace volcnn
