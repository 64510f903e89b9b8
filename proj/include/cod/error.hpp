/**
 * @file error.hpp
 * @brief Exception types shared by every cod module.
 */

#pragma once

#include <stdexcept>
#include <string>

namespace cod {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input data (files, records, messages) violates a format or invariant.
class DataError : public Error {
public:
    using Error::Error;
};

/// A configuration value is outside its allowed range.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// The patient message carried no recognizable symptom.
class NoSymptomsError : public Error {
public:
    NoSymptomsError() : Error("no symptoms") {}
    using Error::Error;
};

/// The remote belief backend failed (transport or unusable reply).
class BackendError : public Error {
public:
    using Error::Error;
};

/// Numerical failure during training or inference.
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace cod
