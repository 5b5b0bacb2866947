#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "volcnn/data.hpp"
#include "volcnn/rng.hpp"
#include "volcnn/tensor.hpp"

namespace volcnn::test {

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

template <typename T>
Tensor<T> random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

/// Writes samples as native volumes plus manifest.csv into dir; returns the manifest path.
std::filesystem::path write_dataset(const std::filesystem::path& dir, const std::vector<VolumeSample>& samples);

/// Synthetic data set with all of n_train_per_class in train and n_val_per_class in val.
std::vector<VolumeSample> synthetic(int n_train_per_class, int n_val_per_class, int extent, std::uint64_t seed);

}  // namespace volcnn::test
