#pragma once

#include <stdexcept>
#include <string>

namespace abclab {

struct OverflowError : std::runtime_error {
    explicit OverflowError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ArityError : std::runtime_error {
    explicit ArityError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DimensionMismatch : std::runtime_error {
    explicit DimensionMismatch(const std::string& msg) : std::runtime_error(msg) {}
};

struct EmptySetError : std::runtime_error {
    explicit EmptySetError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NonFiniteLoss : std::runtime_error {
    explicit NonFiniteLoss(const std::string& msg) : std::runtime_error(msg) {}
};

struct InsufficientCorrectSamples : std::runtime_error {
    explicit InsufficientCorrectSamples(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when a training stage runs out of steps before reaching its target.
struct BudgetExhausted : std::runtime_error {
    BudgetExhausted(const std::string& msg, double best_accuracy)
        : std::runtime_error(msg), best_accuracy(best_accuracy) {}
    double best_accuracy;
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace abclab
