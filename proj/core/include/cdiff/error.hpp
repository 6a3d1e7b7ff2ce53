#pragma once

#include <stdexcept>
#include <string>

namespace cdiff {

// Base class for every error raised by the library. The CLI maps the three
// subclasses onto distinct exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed or inconsistent configuration / specification input.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Problems with the data itself: duplicate keys, missing columns, bad values.
class DataError : public Error {
public:
    using Error::Error;
};

// Numerical failures: rank deficiency, separation, non-convergence.
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace cdiff
