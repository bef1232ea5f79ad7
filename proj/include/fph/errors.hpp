#pragma once

#include <stdexcept>
#include <string>

namespace fph {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes do not conform to an operation's requirements.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A precondition on argument values was violated.
class ContractError : public Error {
public:
    using Error::Error;
};

/// Invalid model, training or run configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A persisted file has the wrong magic, version or layout.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Filesystem access or image decoding failed.
class IoError : public Error {
public:
    using Error::Error;
};

/// A forward or backward pass produced NaN or Inf.
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace fph
