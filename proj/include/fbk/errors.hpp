#pragma once

#include <stdexcept>
#include <string>

namespace fbk {

/// Base class for all library errors.
class error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or geometry violations. Messages carry the offending extents.
class dimension_error : public error {
 public:
  using error::error;
};

/// API misuse that a caller can always avoid: stale caches, mask mismatches.
class contract_error : public error {
 public:
  using error::error;
};

/// Invalid configuration values (probabilities out of range, unknown presets).
class config_error : public error {
 public:
  using error::error;
};

/// Bad runtime data: labels out of range, non-finite gradients.
class data_error : public error {
 public:
  using error::error;
};

/// File-level failures. Messages name the file.
class io_error : public error {
 public:
  using error::error;
};

}  // namespace fbk
