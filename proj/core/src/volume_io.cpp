#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "binary_io.hpp"
#include "volcnn/data.hpp"

namespace volcnn {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kNiftiHeaderSize = 348;
constexpr std::int16_t kDtInt16 = 4;
constexpr std::int16_t kDtFloat32 = 16;

std::vector<char> read_all(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError(DataErrorKind::kIo, "cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(is), {});
}

struct HeaderView {
  const unsigned char* p;
  bool swap;

  template <typename U>
  U get(std::size_t offset) const {
    std::array<unsigned char, sizeof(U)> b;
    std::memcpy(b.data(), p + offset, sizeof(U));
    if (swap) std::reverse(b.begin(), b.end());
    return std::bit_cast<U>(b);
  }
};

Shape volume_dims(const Tensor<float>& volume) {
  if (volume.rank() == 3) return volume.shape();
  if (volume.rank() == 4 && volume.dim(0) == 1) return {volume.dim(1), volume.dim(2), volume.dim(3)};
  throw ShapeError("expected a [1,D,H,W] or [D,H,W] volume, got " + shape_to_string(volume.shape()));
}

}  // namespace

Tensor<float> read_nifti1(const fs::path& path) {
  const std::vector<char> file = read_all(path);
  if (file.size() < kNiftiHeaderSize) {
    throw DataError(DataErrorKind::kTruncated,
                    path.string() + ": " + std::to_string(file.size()) +
                        " bytes, shorter than the 348-byte NIfTI-1 header");
  }
  const auto* bytes = reinterpret_cast<const unsigned char*>(file.data());
  const bool single = std::memcmp(bytes + 344, "n+1\0", 4) == 0;
  const bool pair = std::memcmp(bytes + 344, "ni1\0", 4) == 0;
  if (!single && !pair) {
    throw DataError(DataErrorKind::kBadMagic, path.string() + ": not a NIfTI-1 file (bad magic)");
  }

  HeaderView h{bytes, false};
  auto rank = h.get<std::int16_t>(40);
  if (rank < 1 || rank > 7) {
    h.swap = true;
    rank = h.get<std::int16_t>(40);
    if (rank < 1 || rank > 7) {
      throw DataError(DataErrorKind::kBadValue, path.string() + ": dim[0] is not in [1,7] in either byte order");
    }
  }
  if (rank != 3) {
    throw DataError(DataErrorKind::kBadRank,
                    path.string() + ": rank " + std::to_string(rank) + " image, expected 3");
  }
  std::size_t dims[3];
  for (int i = 0; i < 3; ++i) {
    const auto d = h.get<std::int16_t>(42 + 2 * static_cast<std::size_t>(i));
    if (d < 1) throw DataError(DataErrorKind::kBadValue, path.string() + ": non-positive dim");
    dims[i] = static_cast<std::size_t>(d);
  }
  const auto datatype = h.get<std::int16_t>(70);
  std::size_t bytes_per_voxel = 0;
  if (datatype == kDtInt16) bytes_per_voxel = 2;
  else if (datatype == kDtFloat32) bytes_per_voxel = 4;
  else {
    throw DataError(DataErrorKind::kUnsupportedDatatype,
                    path.string() + ": datatype " + std::to_string(datatype) +
                        " not supported (int16 or float32 only)");
  }
  const float vox_offset = h.get<float>(108);
  const float slope = h.get<float>(112);
  const float inter = h.get<float>(116);

  std::vector<char> img_file;
  const std::vector<char>* payload = &file;
  if (pair) {
    fs::path img = path;
    img.replace_extension(".img");
    img_file = read_all(img);
    payload = &img_file;
  }
  if (!(vox_offset >= 0.0f) || (single && vox_offset < static_cast<float>(kNiftiHeaderSize))) {
    throw DataError(DataErrorKind::kBadValue, path.string() + ": invalid vox_offset");
  }
  const auto start = static_cast<std::size_t>(vox_offset);
  const std::size_t count = dims[0] * dims[1] * dims[2];
  const std::size_t need = count * bytes_per_voxel;
  if (payload->size() < start + need) {
    throw DataError(DataErrorKind::kTruncated,
                    path.string() + ": payload has " +
                        std::to_string(payload->size() > start ? payload->size() - start : 0) +
                        " bytes, header implies " + std::to_string(need));
  }

  Tensor<float> out({1, dims[2], dims[1], dims[0]});
  HeaderView data{reinterpret_cast<const unsigned char*>(payload->data()) + start, h.swap};
  for (std::size_t i = 0; i < count; ++i) {
    out[i] = datatype == kDtInt16 ? static_cast<float>(data.get<std::int16_t>(2 * i))
                                  : data.get<float>(4 * i);
  }
  if (slope != 0.0f && std::isfinite(slope)) {
    for (float& v : out.data()) v = v * slope + inter;
  }
  return out;
}

void write_nifti1(const fs::path& path, const Tensor<float>& volume) {
  const Shape dhw = volume_dims(volume);
  for (std::size_t e : dhw) {
    if (e > 32767) throw ShapeError("extent too large for NIfTI-1");
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError(DataErrorKind::kIo, "cannot write " + path.string());
  std::array<unsigned char, 352> hdr{};
  auto put = [&](std::size_t offset, auto value) {
    const auto b = std::bit_cast<std::array<unsigned char, sizeof(value)>>(value);
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(hdr.data() + offset, b.data(), b.size());
    } else {
      std::reverse_copy(b.begin(), b.end(), hdr.data() + offset);
    }
  };
  put(0, std::int32_t{348});
  put(40, std::int16_t{3});
  put(42, static_cast<std::int16_t>(dhw[2]));
  put(44, static_cast<std::int16_t>(dhw[1]));
  put(46, static_cast<std::int16_t>(dhw[0]));
  for (int i = 4; i < 8; ++i) put(40 + 2 * static_cast<std::size_t>(i), std::int16_t{1});
  put(70, kDtFloat32);
  put(72, std::int16_t{32});
  for (int i = 0; i < 8; ++i) put(76 + 4 * static_cast<std::size_t>(i), 1.0f);
  put(108, 352.0f);
  std::memcpy(hdr.data() + 344, "n+1\0", 4);
  os.write(reinterpret_cast<const char*>(hdr.data()), hdr.size());
  detail::LeWriter w(os);
  w.f32s(volume.data());
  if (!w.ok()) throw DataError(DataErrorKind::kIo, "write failed for " + path.string());
}

Tensor<float> read_native(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError(DataErrorKind::kIo, "cannot open " + path.string());
  detail::LeReader r(is);
  char magic[8];
  r.bytes(magic, 8, path.string() + " header");
  if (std::memcmp(magic, kNativeMagic, 8) != 0) {
    throw DataError(DataErrorKind::kBadMagic, path.string() + ": not a native volume file");
  }
  const std::uint32_t version = r.u32(path.string() + " header");
  if (version != kNativeVersion) {
    throw DataError(DataErrorKind::kBadVersion,
                    path.string() + ": version " + std::to_string(version) + ", expected " +
                        std::to_string(kNativeVersion));
  }
  Shape shape{1, 0, 0, 0};
  for (int i = 1; i <= 3; ++i) {
    shape[static_cast<std::size_t>(i)] = r.u64(path.string() + " header");
    if (shape[static_cast<std::size_t>(i)] == 0 || shape[static_cast<std::size_t>(i)] > (1u << 16)) {
      throw DataError(DataErrorKind::kBadValue, path.string() + ": invalid extent");
    }
  }
  Tensor<float> out(shape);
  try {
    r.f32s(out.data(), "payload");
  } catch (const DataError&) {
    throw DataError(DataErrorKind::kTruncated,
                    path.string() + ": payload shorter than extents " + shape_to_string(shape) + " imply");
  }
  if (!r.at_end()) {
    throw DataError(DataErrorKind::kSizeMismatch,
                    path.string() + ": payload longer than extents " + shape_to_string(shape) + " imply");
  }
  return out;
}

void write_native(const fs::path& path, const Tensor<float>& volume) {
  const Shape dhw = volume_dims(volume);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError(DataErrorKind::kIo, "cannot write " + path.string());
  detail::LeWriter w(os);
  w.bytes(kNativeMagic, 8);
  w.u32(kNativeVersion);
  for (std::size_t e : dhw) w.u64(e);
  w.f32s(volume.data());
  os.flush();
  if (!w.ok()) throw DataError(DataErrorKind::kIo, "write failed for " + path.string());
}

Tensor<float> read_volume(const fs::path& path) {
  const std::string ext = path.extension().string();
  if (ext == ".nii" || ext == ".hdr") return read_nifti1(path);
  return read_native(path);
}

}  // namespace volcnn
