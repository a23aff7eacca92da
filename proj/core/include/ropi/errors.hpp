#pragma once

#include <stdexcept>
#include <string>

namespace ropi {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration or construction parameters. `field()` names the
/// offending entry when one is known.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& message, std::string field = {})
        : Error(field.empty() ? message : field + ": " + message), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

/// A precondition of an operation was not met by the caller.
class ContractViolation : public Error {
public:
    using Error::Error;
};

/// The integrator produced or was fed a non-finite state.
class IntegrationError : public Error {
public:
    using Error::Error;
};

/// A value function, gradient or loss evaluated to a non-finite number.
class EvaluationError : public Error {
public:
    using Error::Error;
};

/// Training blew up (critic weights or loss beyond the divergence bound).
class TrainingDivergence : public Error {
public:
    using Error::Error;
};

/// File could not be read or written, or had an unexpected layout.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace ropi
