#pragma once

#include <stdexcept>
#include <string>

namespace pvqae {

// Error families map onto CLI exit codes: config/integrity/metric -> 1,
// I/O -> 2, numeric divergence -> 3.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IntegrityError : ConfigError {
    using ConfigError::ConfigError;
};

struct MetricError : ConfigError {
    using ConfigError::ConfigError;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace pvqae
