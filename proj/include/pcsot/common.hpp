// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace pcsot {

// Error taxonomy. The CLI maps these onto stable exit codes
// (I/O -> 2, config -> 3, checkpoint -> 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or broadcast mismatch between tensors / arrays.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value or unknown config key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// API misuse: wrong call order, non-scalar loss, mixed tapes, ...
class ContractError : public Error {
 public:
  using Error::Error;
};

// Malformed on-disk data (dataset files, manifests).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Filesystem-level failure (missing path, unwritable directory).
class IoError : public Error {
 public:
  using Error::Error;
};

// Checkpoint does not match the model it is loaded into.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

// An operation that is undefined on empty input was given one.
class EmptyInputError : public Error {
 public:
  using Error::Error;
};

// FNV-1a over raw bytes; used for frozen-parameter immutability checks.
inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace pcsot
