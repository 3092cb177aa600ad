#pragma once

#include <stdexcept>
#include <string>

namespace mflab {

/// Bad caller input: dimension mismatches, non-SPD matrices where SPD is
/// required, malformed scenario files.
class ValidationError : public std::invalid_argument {
public:
    explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

/// Numerical breakdown: eigensolver non-convergence, singular solves,
/// loss of positive definiteness during integration, step-size guards.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

/// A mathematical identity or inequality the library asserts at runtime
/// failed to hold. Surfaces as a test/scenario failure, not a crash.
class InvariantViolation : public std::runtime_error {
public:
    explicit InvariantViolation(const std::string& what) : std::runtime_error(what) {}
};

/// Configuration outside supported bounds (e.g. quadrature grid too coarse).
class ConfigError : public std::invalid_argument {
public:
    explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

/// Input size exceeds a configured cap.
class ResourceError : public std::runtime_error {
public:
    explicit ResourceError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mflab
