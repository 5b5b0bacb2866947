#include "support.hpp"

#include <fstream>
#include <sstream>
#include <unistd.h>

namespace volcnn::test {

namespace fs = std::filesystem;

TempDir::TempDir(const std::string& tag) {
  static int counter = 0;
  path_ = fs::temp_directory_path() /
          ("volcnn-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

template <typename T>
Tensor<T> random_tensor(const Shape& shape, Rng& rng, double lo, double hi) {
  Tensor<T> t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.uniform(lo, hi));
  return t;
}
template Tensor<float> random_tensor<float>(const Shape&, Rng&, double, double);
template Tensor<double> random_tensor<double>(const Shape&, Rng&, double, double);

std::string read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  os << bytes;
}

fs::path write_dataset(const fs::path& dir, const std::vector<VolumeSample>& samples) {
  fs::create_directories(dir / "volumes");
  Manifest m;
  m.base_dir = dir;
  for (const auto& s : samples) {
    const std::string rel = "volumes/" + s.subject_id + ".vol";
    write_native(dir / rel, s.volume);
    m.rows.push_back({s.subject_id, rel, s.label, s.age, s.split});
  }
  write_manifest(dir / "manifest.csv", m);
  return dir / "manifest.csv";
}

std::vector<VolumeSample> synthetic(int n_train_per_class, int n_val_per_class, int extent, std::uint64_t seed) {
  SyntheticOptions o;
  o.n_per_class = n_train_per_class + n_val_per_class;
  o.extent = extent;
  o.val_fraction = static_cast<double>(n_val_per_class) / o.n_per_class;
  o.test_fraction = 0.0;
  Rng rng(seed, static_cast<std::uint64_t>(Stream::kSynth));
  return generate_synthetic(o, rng);
}

}  // namespace volcnn::test
