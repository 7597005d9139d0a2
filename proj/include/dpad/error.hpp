#pragma once

#include <stdexcept>
#include <string>

namespace dpad {

// Base for every error raised by the engine. Subclasses name the contract
// that was broken so callers (and the CLI exit-code mapping) can tell a bad
// configuration apart from a runtime failure.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class RangeError : public Error {
public:
    using Error::Error;
};

class DomainError : public Error {
public:
    using Error::Error;
};

class CacheConsistencyError : public Error {
public:
    using Error::Error;
};

class LookupError : public Error {
public:
    using Error::Error;
};

class ReconciliationError : public Error {
public:
    using Error::Error;
};

class ContractViolation : public Error {
public:
    using Error::Error;
};

} // namespace dpad
