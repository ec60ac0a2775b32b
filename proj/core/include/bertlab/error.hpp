#pragma once

#include <stdexcept>
#include <string>

namespace bertlab {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shape/dimension mismatches between tensors or between a tensor and an op.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Invalid configuration: inconsistent variant/placement, bad concat mode,
// out-of-range hyperparameters. CLI exit code 2.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Bad or missing input data (corpus, example files, records). CLI exit code 3.
class DataError : public Error {
public:
    using Error::Error;
};

// Misuse of stateful objects, e.g. backward on a consumed tape.
class StateError : public Error {
public:
    using Error::Error;
};

// Non-finite values where finiteness is required (NaN gradients). CLI exit code 4.
class NumericError : public Error {
public:
    using Error::Error;
};

// File I/O and integrity failures (checksum, version mismatch).
class IoError : public Error {
public:
    using Error::Error;
};

} // namespace bertlab
