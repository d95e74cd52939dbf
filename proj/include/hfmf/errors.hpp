#pragma once

#include <stdexcept>
#include <string>

namespace hfmf {

/// Base for every error the library raises on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes that cannot be combined.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Caller broke an operation precondition (non-scalar loss, missing grad...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid model, training or run configuration.
class ConfigurationError : public Error {
 public:
  using Error::Error;
};

/// Input data admits no meaningful answer (single-class labels and the like).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// On-disk corpus does not have the expected directory structure.
class LayoutError : public Error {
 public:
  using Error::Error;
};

/// A file could not be decoded.
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace hfmf
