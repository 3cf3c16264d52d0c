#pragma once

#include <stdexcept>
#include <string>

namespace unmix {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents disagree with what an operation requires.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value is outside the domain an operation accepts.
class ValueError : public Error {
 public:
  using Error::Error;
};

/// Invalid or unknown configuration. Carries the offending key and, when the
/// value came from a file, its 1-based line number (0 otherwise).
class ConfigError : public Error {
 public:
  ConfigError(std::string key, std::string message, int line = 0)
      : Error(format(key, message, line)), key_(std::move(key)), line_(line) {}

  const std::string& key() const { return key_; }
  int line() const { return line_; }

 private:
  static std::string format(const std::string& key, const std::string& message, int line) {
    std::string out = line > 0 ? "line " + std::to_string(line) + ": " : std::string{};
    if (!key.empty()) out += "'" + key + "': ";
    return out + message;
  }

  std::string key_;
  int line_;
};

/// Training produced a non-finite loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary input (checkpoint or dataset file).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint carries the right family magic but an unsupported version.
class FormatVersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace unmix
