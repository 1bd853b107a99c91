#pragma once

#include <stdexcept>
#include <string>

namespace hywia {

// Shapes or dimensions disagree (always names both sides in the message).
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Caller handed in a value outside the operation's domain.
struct InputError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// A model/run configuration violates its invariants.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// An API contract was broken (e.g. backward on a non-scalar).
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

// Model structure is internally inconsistent (stale plan, mismatched shapes).
struct StructuralError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Training diverged; message carries the step index.
struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A pruning target cannot be met under the given protections.
struct InfeasibleError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace hywia
