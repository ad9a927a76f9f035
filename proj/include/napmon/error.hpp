#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace napmon {

enum class ErrorKind {
  invalid_argument,
  length_mismatch,
  shape_mismatch,
  non_finite,
  calibration_missing,
  empty_input,
  loo_undefined,
  missing_layer,
  // on-disk formats
  io,
  bad_magic,
  version_mismatch,
  size_mismatch,
  truncated,
  dangling_reference,
};

constexpr std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid argument";
    case ErrorKind::length_mismatch: return "length mismatch";
    case ErrorKind::shape_mismatch: return "shape mismatch";
    case ErrorKind::non_finite: return "non-finite value";
    case ErrorKind::calibration_missing: return "calibration missing";
    case ErrorKind::empty_input: return "empty input";
    case ErrorKind::loo_undefined: return "leave-one-out undefined";
    case ErrorKind::missing_layer: return "missing layer";
    case ErrorKind::io: return "i/o error";
    case ErrorKind::bad_magic: return "bad magic";
    case ErrorKind::version_mismatch: return "version mismatch";
    case ErrorKind::size_mismatch: return "size mismatch";
    case ErrorKind::truncated: return "truncated";
    case ErrorKind::dangling_reference: return "dangling reference";
  }
  return "unknown";
}

/// All failures raised by the library carry a machine-checkable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace napmon
