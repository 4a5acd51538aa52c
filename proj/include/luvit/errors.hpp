#pragma once

#include <stdexcept>
#include <string>

namespace luvit {

/// Tensor extents do not agree with what an operation requires.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A documented precondition of an operation was violated by the caller.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Input data failed a numerical validity check (e.g. a non-stochastic row).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reading a checkpoint or pretrained dump failed.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A run configuration is malformed; `key_path()` names the offending entry.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key_path, const std::string& what)
      : std::runtime_error(key_path + ": " + what), key_path_(std::move(key_path)) {}

  const std::string& key_path() const noexcept { return key_path_; }

 private:
  std::string key_path_;
};

}  // namespace luvit
