#pragma once

#include <stdexcept>
#include <string>

namespace dpcov {

// Exit-code mapping used by the CLI: validation/domain/range errors -> 1,
// solver/singularity errors -> 2, verification failures -> 3.

struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DomainError : ValidationError {
    explicit DomainError(const std::string& msg) : ValidationError(msg) {}
};

struct RangeError : ValidationError {
    explicit RangeError(const std::string& msg) : ValidationError(msg) {}
};

struct DimensionError : ValidationError {
    explicit DimensionError(const std::string& msg) : ValidationError(msg) {}
};

// Requested operation is not supported by the object (e.g. no pseudo-inverse,
// no vector-Jacobian product, dense path over the size cap).
struct CapabilityError : std::runtime_error {
    explicit CapabilityError(const std::string& msg) : std::runtime_error(msg) {}
};

struct SingularityError : std::runtime_error {
    explicit SingularityError(const std::string& msg) : std::runtime_error(msg) {}
};

// Iterative solver failed to reach tolerance; carries the last residual.
struct SolverError : std::runtime_error {
    SolverError(const std::string& msg, double residual_)
        : std::runtime_error(msg), residual(residual_) {}
    double residual;
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace dpcov
