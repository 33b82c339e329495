#pragma once

#include <stdexcept>
#include <string>

namespace tg {

// Base class for all library errors.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shape / rank violations. Message names the operation and shapes.
struct ShapeError : Error {
  using Error::Error;
};

// Bad user-facing configuration: unknown keys, out-of-range values,
// unresolved names. Maps to CLI exit code 2.
struct ConfigError : Error {
  using Error::Error;
};

// Problems with datasets, model files and archives on disk.
// Maps to CLI exit code 3.
struct DataError : Error {
  enum class Kind {
    BadMagic,
    BadDims,
    Truncated,
    CountMismatch,
    ChecksumMismatch,
    VersionMismatch,
    NotFound,
    AlreadyExists,
    Malformed,
  };

  DataError(Kind kind, const std::string& msg) : Error(msg), kind(kind) {}

  Kind kind;
};

// Numerical failure at runtime (NaN loss, budget violation detected by
// the audit). Maps to CLI exit code 4.
struct NumericalError : Error {
  using Error::Error;
};

}  // namespace tg
