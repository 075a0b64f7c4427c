#pragma once

#include <stdexcept>
#include <string>

namespace fshgr {

// Shape/size disagreement between tensors or layers.
class DimensionError : public std::runtime_error {
 public:
  explicit DimensionError(const std::string& what) : std::runtime_error(what) {}
};

// Invalid parameter value (non-positive dilation, cutoff >= Nyquist, ...).
class ParameterError : public std::invalid_argument {
 public:
  explicit ParameterError(const std::string& what) : std::invalid_argument(what) {}
};

// Malformed or truncated file content. Carries the byte offset of the problem.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::uint64_t byte_offset)
      : std::runtime_error(what + " (byte offset " + std::to_string(byte_offset) + ")"),
        offset(byte_offset) {}
  explicit FormatError(const std::string& what) : std::runtime_error(what), offset(0) {}
  std::uint64_t offset;
};

// Catalog construction problems (duplicate keys, unreadable entries).
class CatalogError : public std::runtime_error {
 public:
  explicit CatalogError(const std::string& what) : std::runtime_error(what) {}
};

// Episode sampling cannot satisfy the requested (N, k) from the pool.
class SamplingError : public std::runtime_error {
 public:
  explicit SamplingError(const std::string& what) : std::runtime_error(what) {}
};

// Numeric failure: NaN/Inf in a forward value, diverged training loss.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace fshgr
