#pragma once

#include <stdexcept>
#include <string>

namespace gist {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A precondition or shape contract was broken by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Zero-norm vectors, rotations about a zero displacement and similar.
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss or update.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// A serialized artifact is truncated, corrupt or does not match its consumer.
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Configuration text failed to parse or is missing a field.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, std::size_t line, const std::string& message)
      : Error(message), field_(std::move(field)), line_(line) {}

  const std::string& field() const noexcept { return field_; }
  // 0 when the problem is not tied to a line (e.g. a missing key).
  std::size_t line() const noexcept { return line_; }

 private:
  std::string field_;
  std::size_t line_;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractError(message);
}

}  // namespace gist
