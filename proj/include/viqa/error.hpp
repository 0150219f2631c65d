#pragma once

#include <stdexcept>
#include <string>

namespace viqa {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Mismatched or incompatible dimensions between images, tensors or patches.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Caller supplied a value outside the operation's domain.
class InputError : public Error {
 public:
  using Error::Error;
};

// A numeric result is undefined or not finite (NaN loss, constant series).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace viqa
