#pragma once

#include <stdexcept>

namespace doa {

// Invalid or inconsistent run configuration.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite objective, singular model covariance and similar failures.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace doa
