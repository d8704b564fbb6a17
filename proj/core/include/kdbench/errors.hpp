#pragma once

#include <stdexcept>
#include <string>

namespace kdbench {

// Shape or dimension mismatch between tensors.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// A parameter value outside its valid domain (negative temperature, ...).
struct DomainError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// API misuse: a precondition the caller controls was violated.
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

// An id that is not present in a registry or pool.
struct LookupError : std::out_of_range {
    using std::out_of_range::out_of_range;
};

// An operation would have committed a non-finite value.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss or parameter.
struct DivergenceError : NumericError {
    DivergenceError(const std::string& msg, long long at_step, double at_lr)
        : NumericError(msg), step(at_step), lr(at_lr) {}
    long long step;
    double lr;
};

// Malformed config or manifest file.
struct ConfigError : std::runtime_error {
    ConfigError(const std::string& msg, int at_line = -1)
        : std::runtime_error(at_line >= 0 ? msg + " (line " + std::to_string(at_line) + ")" : msg),
          line(at_line) {}
    int line;
};

}  // namespace kdbench
