#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace dppmlf {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Vector lengths disagree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

// A configuration violates an invariant (filter gain, batch size, schema).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A numerical procedure failed to converge or produced unusable values.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, std::vector<double> residuals = {})
      : Error(what), residuals_(std::move(residuals)) {}

  const std::vector<double>& residuals() const noexcept { return residuals_; }

 private:
  std::vector<double> residuals_;
};

// Malformed input file. The offset names the byte at which parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// Precondition on call order or argument sizes not met.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace dppmlf
