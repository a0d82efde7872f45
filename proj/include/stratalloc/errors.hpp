#pragma once

#include <stdexcept>
#include <string>

namespace stratalloc {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

// Malformed input file.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Well-formed input that violates a data-model invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Statistic required by a formula is absent from the frame.
class MissingMomentError : public Error {
 public:
  using Error::Error;
};

}  // namespace stratalloc
