#pragma once

#include <stdexcept>
#include <string>

namespace eigenprobe {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument or tensor shapes disagree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A precondition on a numeric argument failed (rank out of range, sigma <= 0, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A numerically degenerate input, e.g. a PCA direction with zero variance.
class DegenerateInput : public Error {
 public:
  DegenerateInput(const std::string& what, std::size_t component)
      : Error(what), component_(component) {}
  std::size_t component() const noexcept { return component_; }

 private:
  std::size_t component_;
};

/// Malformed file contents or I/O failure while reading/writing artifacts.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Oracle-side failures. Every oracle error derives from this.
class OracleError : public Error {
 public:
  using Error::Error;
};

class BudgetExhausted : public OracleError {
 public:
  using OracleError::OracleError;
};

class UnknownTarget : public OracleError {
 public:
  using OracleError::OracleError;
};

/// Transport failure talking to a remote oracle.
class ConnectionError : public OracleError {
 public:
  using OracleError::OracleError;
};

/// The remote side speaks a different protocol version or returned garbage.
class ProtocolError : public OracleError {
 public:
  using OracleError::OracleError;
};

/// The server rejected the request as malformed.
class MalformedRequest : public OracleError {
 public:
  using OracleError::OracleError;
};

}  // namespace eigenprobe
