#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "volcnn/rng.hpp"
#include "volcnn/tensor.hpp"

namespace volcnn {

inline constexpr int kNumClasses = 3;
inline constexpr std::array<std::string_view, kNumClasses> kClassNames = {"CN", "MCI", "AD"};

enum class Split { kTrain, kVal, kTest };
inline constexpr std::array<Split, 3> kAllSplits = {Split::kTrain, Split::kVal, Split::kTest};

std::string_view to_string(Split split);
Split parse_split(std::string_view text);
/// "CN" | "MCI" | "AD" -> 0 | 1 | 2.
int parse_label(std::string_view text);

// ---------------------------------------------------------------------------
// Volume files
// ---------------------------------------------------------------------------

/// Uncompressed NIfTI-1 ("n+1" single file, or "ni1" header with a sibling
/// .img), rank 3, int16 or float32, either byte order. Applies scl_slope /
/// scl_inter when the slope is nonzero. Returns [1, nz, ny, nx], i.e. the
/// file's voxel order with x varying fastest.
Tensor<float> read_nifti1(const std::filesystem::path& path);

/// Single-file float32 NIfTI-1 with unit spacing. volume: [1,D,H,W] or [D,H,W].
void write_nifti1(const std::filesystem::path& path, const Tensor<float>& volume);

/// Native format: 8-byte magic "VCNNVOL1", u32 version (1), u64 D, H, W,
/// little-endian f32 payload. Reads return [1,D,H,W].
inline constexpr char kNativeMagic[8] = {'V', 'C', 'N', 'N', 'V', 'O', 'L', '1'};
inline constexpr std::uint32_t kNativeVersion = 1;
Tensor<float> read_native(const std::filesystem::path& path);
void write_native(const std::filesystem::path& path, const Tensor<float>& volume);

/// .nii files go to read_nifti1, everything else to read_native.
Tensor<float> read_volume(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

struct ManifestRow {
  std::string subject_id;
  std::string path;  // as written; relative paths resolve against the manifest's directory
  int label = 0;
  double age = 0.0;
  Split split = Split::kTrain;
  bool operator==(const ManifestRow&) const = default;
};

struct Manifest {
  std::vector<ManifestRow> rows;
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const ManifestRow& row) const;
  std::vector<ManifestRow> rows_in(Split split) const;
};

inline constexpr std::string_view kManifestHeader = "subject_id,path,label,age,split";

/// Parses the CSV and checks for leakage. Leaking manifests throw
/// DataError(kLeakage) unless allow_leakage is set, in which case the
/// violations are printed as warnings.
Manifest load_manifest(const std::filesystem::path& path, bool allow_leakage = false);
Manifest parse_manifest(std::string_view csv, const std::filesystem::path& base_dir = {},
                        bool allow_leakage = false);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

/// Subjects appearing in more than one split, sorted.
std::vector<std::string> check_leakage(const Manifest& manifest);

struct SplitCounts {
  // [split][class]
  std::array<std::array<std::size_t, kNumClasses>, 3> scans{};
  std::array<std::array<std::size_t, kNumClasses>, 3> subjects{};
};
SplitCounts count_splits(const Manifest& manifest);
std::string format_counts(const SplitCounts& counts);

/// Keeps round(rate * n) train subjects of each class (all scans of a kept
/// subject stay), chosen without replacement. Val and test rows are untouched
/// and row order is preserved.
Manifest subsample(const Manifest& manifest, double rate, Rng& rng);

// ---------------------------------------------------------------------------
// Samples and preprocessing
// ---------------------------------------------------------------------------

struct VolumeSample {
  Tensor<float> volume;  // [1,D,H,W]
  int label = 0;
  double age = 0.0;
  std::string subject_id;
  Split split = Split::kTrain;
};

/// Reads every row of `split` in manifest order.
std::vector<VolumeSample> load_split(const Manifest& manifest, Split split);

/// Blur over the last three axes. Radius ceil(3 sigma); the kernel is
/// renormalized over the taps that fall inside the volume.
template <typename T>
Tensor<T> gaussian_blur(const Tensor<T>& volume, double sigma);

struct Crop {
  Tensor<float> volume;
  std::array<std::size_t, 3> offset{};
};

/// Cubic crop of the last three axes. Offsets are uniform over the valid range.
Crop random_crop(const Tensor<float>& volume, std::size_t extent, Rng& rng);
/// Offset floor((in - extent) / 2) per axis.
Crop center_crop(const Tensor<float>& volume, std::size_t extent);
Crop crop_at(const Tensor<float>& volume, std::size_t extent, std::array<std::size_t, 3> offset);

/// Per-volume z-score. Throws DataError(kBadValue) on a constant volume.
Tensor<float> intensity_normalize(const Tensor<float>& volume);

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

struct SyntheticOptions {
  int n_per_class = 8;
  int extent = 32;
  double noise = 0.1;
  double val_fraction = 0.15;
  double test_fraction = 0.15;
};

/// One subject per volume. A brain-like ellipsoid of intensity 1 contains a
/// centered ellipsoidal cavity of intensity 0 whose radius grows CN < MCI < AD,
/// plus Gaussian noise. Ages follow per-class normal distributions. Subjects
/// of each class are split into train/val/test by the rounded fractions
/// (70/15/15 by default).
std::vector<VolumeSample> generate_synthetic(const SyntheticOptions& options, Rng& rng);

/// Nominal cavity radius as a fraction of the extent, per class.
inline constexpr std::array<double, kNumClasses> kCavityRadius = {0.10, 0.16, 0.22};

}  // namespace volcnn
