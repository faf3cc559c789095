#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace vaednn {

/// Machine-readable error categories. The string form is what the CLI
/// reports in its error record.
enum class ErrorKind {
  invalid_geometry,
  stress_cell_outside_mask,
  covariance_not_positive_definite,
  insufficient_samples,
  zero_eigenvalue_mode,
  length_mismatch,
  shape_mismatch,
  no_convergence,
  solver_failure,
  version_mismatch,
  corrupt_container,
  fingerprint_mismatch,
  missing_checkpoint,
  divergence,
  zero_reference,
  inactive_well,
  duplicate_well,
  invalid_config,
  unwritable_directory,
  io_error,
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind), detail_(message) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorKind kind_;
  std::string detail_;
};

inline const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::invalid_geometry: return "invalid-geometry";
    case ErrorKind::stress_cell_outside_mask: return "stress-cell-outside-mask";
    case ErrorKind::covariance_not_positive_definite: return "covariance-not-positive-definite";
    case ErrorKind::insufficient_samples: return "insufficient-samples";
    case ErrorKind::zero_eigenvalue_mode: return "zero-eigenvalue-mode";
    case ErrorKind::length_mismatch: return "length-mismatch";
    case ErrorKind::shape_mismatch: return "shape-mismatch";
    case ErrorKind::no_convergence: return "no-convergence";
    case ErrorKind::solver_failure: return "solver-failure";
    case ErrorKind::version_mismatch: return "version-mismatch";
    case ErrorKind::corrupt_container: return "corrupt-container";
    case ErrorKind::fingerprint_mismatch: return "fingerprint-mismatch";
    case ErrorKind::missing_checkpoint: return "missing-checkpoint";
    case ErrorKind::divergence: return "divergence";
    case ErrorKind::zero_reference: return "zero-reference";
    case ErrorKind::inactive_well: return "inactive-well";
    case ErrorKind::duplicate_well: return "duplicate-well";
    case ErrorKind::invalid_config: return "invalid-config";
    case ErrorKind::unwritable_directory: return "unwritable-directory";
    case ErrorKind::io_error: return "io-error";
  }
  return "unknown";
}

}  // namespace vaednn
