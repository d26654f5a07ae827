#pragma once

#include <stdexcept>
#include <string>

namespace olsense {

/// Precondition violated by a caller (bad mass, n_max < 1, t outside the protocol, ...).
class DomainError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// The RK4 integrator lost norm or the state leaked off the truncated comb.
class IntegrationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Fisher-matrix algebra that has no defined answer (singular nuisance block, zero diagonal).
class EstimationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed protocol, config or grid file. `where` names the offending field or line.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& where, const std::string& what)
        : std::runtime_error(where + ": " + what), where_(where) {}
    const std::string& where() const noexcept { return where_; }

private:
    std::string where_;
};

/// Unknown key, wrong type or out-of-range value in a run configuration.
class ConfigError : public std::invalid_argument {
public:
    explicit ConfigError(const std::string& what) : std::invalid_argument("configuration error: " + what) {}
};

/// Non-finite network weights or loss during training.
class TrainingAbort : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace olsense
