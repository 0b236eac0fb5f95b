#pragma once

#include <stdexcept>
#include <string>

namespace hcrl {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke an operation's precondition (bad action range, bad shape...).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public ContractViolation {
 public:
  using ContractViolation::ContractViolation;
};

/// Malformed or unreadable input data (files, checkpoints, datasets).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or command-line usage.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A numeric quantity became non-finite during optimization.
class NumericAbort : public Error {
 public:
  using Error::Error;
};

}  // namespace hcrl
