#pragma once

#include <stdexcept>
#include <string>

namespace pursuit {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid dimensions or configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Scene construction or placement failure.
class SceneError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an operation's precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Malformed serialized data (checkpoints, tables, CSV).
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace pursuit
