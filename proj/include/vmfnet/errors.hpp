#pragma once

#include <stdexcept>
#include <string>

namespace vmfnet {

// Error taxonomy. The CLI maps categories onto exit codes:
// usage errors -> 2, ConfigError -> 3, IoError (and subclasses) -> 4,
// everything else -> 1.

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidInputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidLabelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EmptyBatchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A kernel row collapsed to (near) zero norm and cannot be projected
// back onto the unit sphere.
struct DegenerateKernelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CorruptDatasetError : IoError {
  using IoError::IoError;
};

struct FormatVersionError : IoError {
  using IoError::IoError;
};

}  // namespace vmfnet
