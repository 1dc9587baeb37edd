#pragma once

#include <stdexcept>
#include <string>

namespace flowplan {

// Unusable input: missing/corrupt files, bad schemas, configs whose
// constraints cannot be satisfied. CLI exit code 2.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training produced a non-finite loss or gradient. Carries the last finite
// loss value seen so the CLI can report it. Exit code 3.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const std::string& msg, double last_finite)
        : std::runtime_error(msg), last_finite_loss(last_finite) {}
    double last_finite_loss;
};

}  // namespace flowplan
