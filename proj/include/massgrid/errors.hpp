#pragma once

#include <stdexcept>
#include <string>

namespace massgrid {

/// Base class for all massgrid errors. Everything thrown by the library
/// derives from this, so callers can catch one type at the boundary.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Configuration / input validation failures (CLI exit code 2).
struct ConfigError : Error {
    using Error::Error;
};

/// The conformal factor fails to vanish on the required flat ball.
struct FlatnessViolation : Error {
    using Error::Error;
};

/// Geometric constraint violations (flat ball too large, bad dimension, ...).
struct GeometryError : Error {
    using Error::Error;
};

/// Two objects built on different grids were combined.
struct GridMismatch : Error {
    using Error::Error;
};

/// Grid too coarse to resolve the flat ball or the cutoff annulus.
struct ResolutionError : Error {
    using Error::Error;
};

/// Iterative solver failed to reach the requested tolerance (exit code 3).
struct NotConverged : Error {
    using Error::Error;
};

/// Operator is not positive (indefinite direction met, or certification failed).
struct NotPositive : Error {
    using Error::Error;
};

/// Dirichlet domain has no interior nodes.
struct EmptyDomain : Error {
    using Error::Error;
};

/// Dirichlet domain does not contain the support of the cutoff.
struct DomainTooSmall : Error {
    using Error::Error;
};

/// A field handed to evaluate_I does not vanish at the marked node.
struct CenterNotZero : Error {
    using Error::Error;
};

/// Composite Green function non-positive at some node (exit code 4 territory).
struct PositivityViolation : Error {
    PositivityViolation(const std::string& msg, std::size_t node)
        : Error(msg), node_index(node) {}
    std::size_t node_index;
};

/// nonneg_curvature_seed could not satisfy its constraints at this resolution.
struct ConstructionFailed : Error {
    using Error::Error;
};

/// find_a_infinity exhausted its search range without a sign change.
struct NoSignChange : Error {
    using Error::Error;
};

} // namespace massgrid
