#pragma once

#include <stdexcept>
#include <string>

namespace xfi {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible for the requested operation.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// An operation produced NaN or Inf.
class NonFiniteError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration value (heads not dividing d_f, unknown variant, bad key...).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A documented precondition of an operation does not hold.
class PreconditionError : public Error {
public:
    using Error::Error;
};

/// Training loss became non-finite.
class DivergenceError : public Error {
public:
    DivergenceError(std::size_t step, const std::string& what)
        : Error("diverged at step " + std::to_string(step) + ": " + what), step_(step) {}

    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

/// Checkpoint or report I/O failure, including digest mismatches.
class IoError : public Error {
public:
    using Error::Error;
};

} // namespace xfi
