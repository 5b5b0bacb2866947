#include "volcnn/error.hpp"

#include <atomic>
#include <iostream>
#include <sstream>

namespace volcnn {

namespace {
std::atomic<bool> g_warnings_enabled{true};
}  // namespace

std::string_view to_string(DataErrorKind kind) {
  switch (kind) {
    case DataErrorKind::kIo: return "io";
    case DataErrorKind::kBadMagic: return "bad-magic";
    case DataErrorKind::kBadVersion: return "bad-version";
    case DataErrorKind::kUnsupportedDatatype: return "unsupported-datatype";
    case DataErrorKind::kBadRank: return "bad-rank";
    case DataErrorKind::kTruncated: return "truncated";
    case DataErrorKind::kSizeMismatch: return "size-mismatch";
    case DataErrorKind::kBadManifest: return "bad-manifest";
    case DataErrorKind::kLeakage: return "leakage";
    case DataErrorKind::kBadValue: return "bad-value";
  }
  return "unknown";
}

DataError::DataError(DataErrorKind kind, const std::string& message)
    : Error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

std::string shape_to_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void warn(std::string_view message) {
  if (g_warnings_enabled.load(std::memory_order_relaxed)) {
    std::cerr << "warning: " << message << '\n';
  }
}

void set_warnings_enabled(bool enabled) { g_warnings_enabled.store(enabled); }
bool warnings_enabled() { return g_warnings_enabled.load(); }

}  // namespace volcnn
