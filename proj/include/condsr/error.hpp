#pragma once

#include <stdexcept>
#include <string>

namespace condsr {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input file could not be parsed; the message names the offending field.
class ParseError : public Error {
public:
    using Error::Error;
};

/// Structurally valid input that violates a domain invariant.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Operand shapes do not agree.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// An iterative solver stopped before reaching its tolerance.
class ConvergenceError : public Error {
public:
    using Error::Error;
};

/// Training produced a NaN or infinite loss.
class NumericalError : public Error {
public:
    using Error::Error;
};

}  // namespace condsr
