#pragma once

// Little-endian readers/writers over byte streams, independent of host order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "volcnn/error.hpp"

namespace volcnn::detail {

class LeWriter {
 public:
  explicit LeWriter(std::ostream& os) : os_(os) {}

  void bytes(const void* p, std::size_t n) { os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v) { uint(v, 4); }
  void u64(std::uint64_t v) { uint(v, 8); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  void f32s(std::span<const float> values) {
    if constexpr (std::endian::native == std::endian::little) {
      bytes(values.data(), values.size() * 4);
    } else {
      for (float v : values) uint(std::bit_cast<std::uint32_t>(v), 4);
    }
  }
  bool ok() const { return static_cast<bool>(os_); }

 private:
  void uint(std::uint64_t v, int n) {
    unsigned char buf[8];
    for (int i = 0; i < n; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(buf, static_cast<std::size_t>(n));
  }
  std::ostream& os_;
};

/// Every read throws DataError(kTruncated) naming `what` when bytes run out.
class LeReader {
 public:
  explicit LeReader(std::istream& is) : is_(is) {}

  void bytes(void* p, std::size_t n, const std::string& what) {
    is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) {
      throw DataError(DataErrorKind::kTruncated, "file ends inside " + what);
    }
  }
  std::uint8_t u8(const std::string& what) {
    std::uint8_t v;
    bytes(&v, 1, what);
    return v;
  }
  std::uint32_t u32(const std::string& what) { return static_cast<std::uint32_t>(uint(4, what)); }
  std::uint64_t u64(const std::string& what) { return uint(8, what); }
  double f64(const std::string& what) { return std::bit_cast<double>(u64(what)); }
  std::string str(const std::string& what, std::uint64_t max_len = 1u << 20) {
    const std::uint64_t n = u64(what);
    if (n > max_len) throw DataError(DataErrorKind::kBadValue, "implausible length for " + what);
    std::string s(n, '\0');
    bytes(s.data(), n, what);
    return s;
  }
  void f32s(std::span<float> out, const std::string& what) {
    bytes(out.data(), out.size() * 4, what);
    if constexpr (std::endian::native != std::endian::little) {
      for (float& v : out) {
        std::uint32_t u;
        std::memcpy(&u, &v, 4);
        v = std::bit_cast<float>(__builtin_bswap32(u));
      }
    }
  }
  bool at_end() { return is_.peek() == std::char_traits<char>::eof(); }

 private:
  std::uint64_t uint(int n, const std::string& what) {
    unsigned char buf[8];
    bytes(buf, static_cast<std::size_t>(n), what);
    std::uint64_t v = 0;
    for (int i = n - 1; i >= 0; --i) v = (v << 8) | buf[i];
    return v;
  }
  std::istream& is_;
};

}  // namespace volcnn::detail
