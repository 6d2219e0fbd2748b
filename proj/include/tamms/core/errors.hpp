#pragma once

#include <stdexcept>
#include <string>

namespace tamms {

// Root of every error thrown by the library. The CLI maps these to exit code 1.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Tensor shapes or axes that do not line up.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Invalid hyperparameters or configuration keys.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
public:
    using Error::Error;
};

// Wrong number of items (frames, deltas, files).
class ArityError : public Error {
public:
    using Error::Error;
};

class IndexError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// Input data violating a documented invariant.
class ValidationError : public Error {
public:
    using Error::Error;
};

// Operation called in the wrong lifecycle state (e.g. missing pretrained weights).
class StateError : public Error {
public:
    using Error::Error;
};

// Raised by the finite-difference verifier when its own preconditions fail.
class OracleError : public Error {
public:
    using Error::Error;
};

}  // namespace tamms
