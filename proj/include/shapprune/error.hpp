#pragma once

#include <stdexcept>
#include <string>

namespace shapprune {

// Base class for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input: bad CSV rows, corrupt or foreign checkpoint files,
// unreadable paths. The CLI maps these to exit code 2.
class IoError : public Error {
 public:
  using Error::Error;
};

// Violated domain precondition or numerical failure. Exit code 1.
class DomainError : public Error {
 public:
  using Error::Error;
};

}  // namespace shapprune
