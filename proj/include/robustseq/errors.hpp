// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace robustseq {

/// Bad input: malformed data, inconsistent shapes, out-of-range options.
/// The CLI maps this family to exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Unparseable or structurally corrupt file contents.
class FormatError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Checkpoint written by an incompatible format revision.
class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// A metric is undefined for the given labels (e.g. no positives).
class UndefinedMetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Non-finite loss or gradient encountered during training.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Filesystem failure (cannot open, cannot write).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace robustseq
