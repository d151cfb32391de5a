#pragma once

#include <stdexcept>
#include <string>

namespace rgsym {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Shapes or dimensions that do not line up.
class ShapeError : public Error {
  public:
    using Error::Error;
};

/// A precondition on an argument's value was violated.
class DomainError : public Error {
  public:
    using Error::Error;
};

/// NaN or infinity encountered in input or an intermediate value.
class NonFiniteError : public Error {
  public:
    using Error::Error;
};

/// No closed-form cumulant propagation exists for the requested activation.
class UnsupportedActivation : public Error {
  public:
    using Error::Error;
};

/// Truncated cumulant series is not a valid characteristic function on the
/// requested frequency window.
class CumulantExpansionInvalid : public Error {
  public:
    using Error::Error;
};

class IoError : public Error {
  public:
    using Error::Error;
};

}  // namespace rgsym
