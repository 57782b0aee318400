#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fhn {

// State blew up or turned NaN during time integration; carries the step index.
struct NonFiniteError : std::runtime_error {
    std::size_t step;
    explicit NonFiniteError(std::size_t step_index)
        : std::runtime_error("non-finite state at step " + std::to_string(step_index)),
          step(step_index) {}
};

struct NotSpdError : std::runtime_error {
    explicit NotSpdError(const std::string& what_arg)
        : std::runtime_error("matrix not symmetric positive definite: " + what_arg) {}
};

struct ShapeMismatchError : std::runtime_error {
    std::size_t layer_index;
    ShapeMismatchError(const std::string& what_arg, std::size_t layer = 0)
        : std::runtime_error("shape mismatch: " + what_arg), layer_index(layer) {}
};

// Internal invariant violated (bounded loops exhausted, impossible configs).
struct BugError : std::logic_error {
    explicit BugError(const std::string& what_arg) : std::logic_error("bug: " + what_arg) {}
};

struct EmptyInputError : std::invalid_argument {
    explicit EmptyInputError(const std::string& what_arg)
        : std::invalid_argument("empty input: " + what_arg) {}
};

struct ZeroNormTruthError : std::invalid_argument {
    std::size_t sample_index;
    explicit ZeroNormTruthError(std::size_t sample)
        : std::invalid_argument("zero-norm truth at sample " + std::to_string(sample)),
          sample_index(sample) {}
};

struct DegenerateTruthsError : std::invalid_argument {
    DegenerateTruthsError() : std::invalid_argument("all truth vectors identical") {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& what_arg) : std::runtime_error("i/o: " + what_arg) {}
};

struct ConfigError : std::invalid_argument {
    explicit ConfigError(const std::string& what_arg) : std::invalid_argument(what_arg) {}
};

} // namespace fhn
