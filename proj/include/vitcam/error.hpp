#pragma once

#include <stdexcept>
#include <string>

namespace vitcam {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes that do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Argument outside the domain of an operation (empty row, zero-sized output, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Non-finite values produced during inference.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Inputs that parse but break a contract (missing tensors, bad boxes, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Malformed checkpoint container.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Filesystem or decode failures.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace vitcam
