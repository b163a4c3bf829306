#pragma once

#include <stdexcept>
#include <string>

namespace latprune {

// Base class for all domain errors raised by the library. CLI maps these to
// exit code 1; usage problems are handled before the library is entered.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input files (CSV samples, JSON artifacts).
class ParseError : public Error {
 public:
  using Error::Error;
};

// A budget cannot be met even by the forced minimum configuration.
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

// Query outside a table grid or an unknown layer id.
class LookupError : public Error {
 public:
  using Error::Error;
};

}  // namespace latprune
