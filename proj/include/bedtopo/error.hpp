#pragma once

#include <stdexcept>
#include <string>

namespace bedtopo {

// Malformed file contents (bad magic, unknown version, bad flag byte).
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// File payload shorter or longer than its header announces.
class TruncationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shape/channel mismatch between tensors, grids or layers.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Least-squares or linear system without a unique solution.
class DegenerateFitError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Non-finite values, divergence, failed factorizations.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Operation called in the wrong state (e.g. backward before forward).
class StateError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Invalid user configuration.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

}  // namespace bedtopo
