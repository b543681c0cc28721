#pragma once

#include <stdexcept>
#include <string>

namespace densconf {

// Base of every error the library raises. The CLI maps ConfigError and
// InputError raised while parsing arguments to exit code 1, everything else
// to exit code 2.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Inconsistent layer chain, bad flag values, malformed spec strings.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Dimension mismatch, out-of-range arguments, unlabelled samples.
class InputError : public Error {
public:
    using Error::Error;
};

// Density fitting failed (too few samples for a class).
class FitError : public Error {
public:
    using Error::Error;
};

// Operation invoked on an object that is not ready (e.g. unfitted density).
class StateError : public Error {
public:
    using Error::Error;
};

// Malformed on-disk data. Carries the byte offset when known.
class FormatError : public Error {
public:
    FormatError(const std::string& what, long long offset = -1)
        : Error(offset >= 0 ? what + " (at byte offset " + std::to_string(offset) + ")" : what),
          offset_(offset) {}

    long long offset() const noexcept { return offset_; }

private:
    long long offset_;
};

// The model gives no usable gradient direction (all class gradients equal).
class DegenerateModelError : public Error {
public:
    using Error::Error;
};

} // namespace densconf
