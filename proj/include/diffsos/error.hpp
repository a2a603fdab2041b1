#pragma once

#include <stdexcept>
#include <string>

namespace diffsos {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform for the named operation.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A value left the finite range (checked mode, simulator blow-up, training divergence).
class NumericError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration or argument domain violation.
class ConfigError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Checkpoint is corrupt or does not match the requested model.
class CheckpointError : public Error {
public:
    using Error::Error;
};

} // namespace diffsos
