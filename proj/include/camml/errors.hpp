#pragma once

#include <stdexcept>
#include <string>

namespace camml {

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape / axis / head-count mismatches caught before any data is touched.
struct DimensionError : Error {
  explicit DimensionError(const std::string& msg) : Error(msg) {}
};

// Bad configuration values (unknown keys, odd M, indivisible heads, ...).
struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Malformed input data (missing image, empty sample list, bad token id, ...).
struct DataError : Error {
  explicit DataError(const std::string& msg) : Error(msg) {}
};

// On-disk format problems, each its own class so callers can tell them apart.
struct FormatError : Error {
  explicit FormatError(const std::string& msg) : Error(msg) {}
};
struct VersionError : FormatError {
  explicit VersionError(const std::string& msg) : FormatError(msg) {}
};
struct TruncatedFileError : FormatError {
  explicit TruncatedFileError(const std::string& msg) : FormatError(msg) {}
};
struct ChecksumError : FormatError {
  explicit ChecksumError(const std::string& msg) : FormatError(msg) {}
};

}  // namespace camml
