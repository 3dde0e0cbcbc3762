#pragma once

#include <stdexcept>
#include <string>

namespace djscc {

// Base of everything the library throws on a contract violation.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or other numeric breakdown during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Fading coefficient too close to zero to equalize; the caller should redraw.
class DeepFadeError : public Error {
 public:
  using Error::Error;
};

}  // namespace djscc
