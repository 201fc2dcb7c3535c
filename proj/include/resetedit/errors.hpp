#pragma once

#include <stdexcept>
#include <string>

namespace resetedit {

// Violated shape/length/range preconditions.
struct ContractError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct RangeError : std::out_of_range {
    using std::out_of_range::out_of_range;
};

// Bad configuration: unknown keys, invalid hyperparameters, unknown predictor kinds.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed tensor files or checkpoints.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A training loop produced a non-finite loss.
struct TrainingError : std::runtime_error {
    TrainingError(const std::string& what, long step)
        : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step(step) {}
    long step;
};

// Latent refinement hit a non-finite gradient.
struct OptimizationError : std::runtime_error {
    OptimizationError(const std::string& what, long step)
        : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step(step) {}
    long step;
};

}  // namespace resetedit
