#pragma once

#include <stdexcept>
#include <string>

namespace ctlm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or empty user input (text, files, prefixes).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Token id, position or index outside its valid range.
class RangeError : public Error {
 public:
  using Error::Error;
};

/// A caller broke a documented precondition (shape mismatch, label among negatives).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Unreadable or inconsistent file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Training diverged or could not proceed.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace ctlm
