#pragma once

#include <stdexcept>
#include <string>

namespace dfip {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor or volume extents do not agree.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A configuration violates a documented invariant.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// An argument is outside the domain of an operation (time step, empty mask, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

/// An object was used in the wrong lifecycle state.
class StateError : public Error {
public:
    using Error::Error;
};

/// File format or filesystem failure.
class IoError : public Error {
public:
    using Error::Error;
};

} // namespace dfip
