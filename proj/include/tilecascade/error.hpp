#pragma once

#include <stdexcept>
#include <string>

namespace tilecascade {

// Base class for every error raised by the library. Callers that only care
// about "did it fail" catch this; the subclasses name the failure category.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Wrong magic, unsupported version, or a header that contradicts itself.
class FormatError : public Error {
public:
    using Error::Error;
};

// File ended early or carries trailing garbage.
class CorruptionError : public Error {
public:
    using Error::Error;
};

// An input violates a documented invariant (NaN values, bad shapes, ...).
class ValidationError : public Error {
public:
    using Error::Error;
};

// Non-finite values appeared during computation.
class NumericError : public Error {
public:
    using Error::Error;
};

// An object was used in the wrong lifecycle state (e.g. stale activations).
class StateError : public Error {
public:
    using Error::Error;
};

// Training or pipeline configuration cannot be satisfied.
class ConfigError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class GenerationError : public Error {
public:
    using Error::Error;
};

}  // namespace tilecascade
