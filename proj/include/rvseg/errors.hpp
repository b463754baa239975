#pragma once

#include <stdexcept>
#include <string>

namespace rvseg {

// Base class for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Incompatible tensor shapes or non-integral derived extents.
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// A normalization slice with no unmasked entries.
struct DegenerateSliceError : Error {
    explicit DegenerateSliceError(const std::string& msg) : Error(msg) {}
};

// An operation was called outside its contract (e.g. non-scalar loss).
struct ContractError : Error {
    explicit ContractError(const std::string& msg) : Error(msg) {}
};

// Invalid user-provided input (empty query, bad mask values, ...).
struct InputError : Error {
    explicit InputError(const std::string& msg) : Error(msg) {}
};

// Training aborted (NaN gradient or loss).
struct TrainingError : Error {
    explicit TrainingError(const std::string& msg) : Error(msg) {}
};

// Invalid or ambiguous synthetic scene specification.
struct SceneError : Error {
    explicit SceneError(const std::string& msg) : Error(msg) {}
};

// Function evaluation failure inside the gradient checker.
struct EvalError : Error {
    explicit EvalError(const std::string& msg) : Error(msg) {}
};

// File or stream problem: unreadable path, bad magic, truncated payload,
// or a checkpoint whose stored config disagrees with the model's.
struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(msg) {}
};

}  // namespace rvseg
