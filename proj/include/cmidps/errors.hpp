#pragma once

#include <stdexcept>
#include <string>

namespace cmidps {

/// Invalid user-supplied parameter (schedule bounds, probe counts, operator
/// geometry, config files).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Step index outside the valid 1..N range of a schedule.
struct StepIndexError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Vector/matrix dimension mismatch between coupled arguments.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A matrix expected to be symmetric positive definite failed to factor.
struct FactorizationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A model was asked for a derivative order it cannot provide.
struct CapabilityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Dense tensor/matrix path requested above the configured dimension limit.
struct DenseLimitError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Sampler state became non-finite; carries the reverse step at which it
/// happened.
struct NonFiniteError : std::runtime_error {
    NonFiniteError(const std::string& what, int step_t)
        : std::runtime_error(what), step(step_t) {}
    int step;
};

}  // namespace cmidps
