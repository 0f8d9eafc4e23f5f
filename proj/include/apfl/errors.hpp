#pragma once

#include <stdexcept>
#include <string>

namespace apfl {

// Invalid argument supplied by a caller (dimension mismatch, empty dataset,
// malformed spec, unknown id).
struct RejectedInput : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Local training produced a non-finite loss. Carries the epoch at which the
// divergence was detected.
struct DivergedTraining : std::runtime_error {
    int epoch;
    explicit DivergedTraining(int epoch_index)
        : std::runtime_error("training diverged at epoch " + std::to_string(epoch_index)),
          epoch(epoch_index) {}
};

// Broadcast predictor update produced a non-finite loss.
struct DivergedPredictor : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Refinement actions were computed against a state-that no longer matches the
// server; the caller may recompute and retry.
struct StaleActions : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Configuration file problem; message names the offending key and line.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace apfl
