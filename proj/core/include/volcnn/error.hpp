#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace volcnn {

/// Base of every error the library throws. Each subclass maps to one CLI exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes or layer specs that do not fit together.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values or mismatched configurations.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf during training, or a failed gradient check.
class NumericError : public Error {
 public:
  using Error::Error;
};

enum class DataErrorKind {
  kIo,
  kBadMagic,
  kBadVersion,
  kUnsupportedDatatype,
  kBadRank,
  kTruncated,
  kSizeMismatch,
  kBadManifest,
  kLeakage,
  kBadValue,
};

std::string_view to_string(DataErrorKind kind);

/// Failures while reading or validating volumes, manifests and checkpoints.
class DataError : public Error {
 public:
  DataError(DataErrorKind kind, const std::string& message);
  DataErrorKind kind() const noexcept { return kind_; }

 private:
  DataErrorKind kind_;
};

std::string shape_to_string(const std::vector<std::size_t>& shape);

/// Writes "warning: <message>" to stderr unless warnings are silenced.
void warn(std::string_view message);
void set_warnings_enabled(bool enabled);
bool warnings_enabled();

}  // namespace volcnn
