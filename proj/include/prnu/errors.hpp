#pragma once

#include <stdexcept>
#include <string>

namespace prnu {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

/// Constant or otherwise rank-deficient input where a scale is required.
class DegenerateInputError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class EmptyInputError : public Error {
public:
    using Error::Error;
};

class DuplicateError : public Error {
public:
    using Error::Error;
};

/// NaN/Inf encountered during an iterative computation.
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace prnu
