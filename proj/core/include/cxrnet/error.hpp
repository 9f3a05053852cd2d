#pragma once

#include <stdexcept>
#include <string>

namespace cxr {

// Every failure raised by the library derives from Error so that callers can
// map categories onto exit codes without string matching.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class IntegrityError : public FormatError {
 public:
  using FormatError::FormatError;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace cxr
