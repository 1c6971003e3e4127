#pragma once

#include <stdexcept>
#include <string>

namespace cat {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller broke a precondition (shape, range, configuration mismatch).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Input bytes do not form a valid file of the expected format.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Well-formed input using a feature this library does not handle.
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

// An internal invariant was violated (non-finite training loss, etc.).
class InvariantError : public Error {
 public:
  using Error::Error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractError(message);
}

}  // namespace cat
