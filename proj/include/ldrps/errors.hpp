#pragma once

#include <stdexcept>
#include <string>

namespace ldrps {

/// Invalid or unknown configuration values. CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// API misuse: shape mismatches, out-of-range timesteps. CLI exit code 2.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Non-finite losses or gradients during sampling or training. CLI exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training diverged (loss became non-finite).
class TrainingError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// File system and codec failures, always carrying the offending path. CLI exit code 4.
class IoError : public std::runtime_error {
 public:
  IoError(const std::string& path, const std::string& what)
      : std::runtime_error(path + ": " + what), path_(path) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

}  // namespace ldrps
