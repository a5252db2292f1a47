#pragma once

#include <stdexcept>
#include <string>

namespace covexplain {

// Base class for every error raised by the library. The command-line tool
// maps these to exit status 2.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Input that violates a documented precondition (bad shapes, empty selections,
// single-class data, ...).
class InvalidArgument : public Error {
public:
    using Error::Error;
};

// Malformed or truncated on-disk data.
class FormatError : public Error {
public:
    using Error::Error;
};

// An iterative solver or numeric routine could not produce a usable result.
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace covexplain
