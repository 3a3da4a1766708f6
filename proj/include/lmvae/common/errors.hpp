#pragma once

#include <stdexcept>
#include <string>

namespace lmvae {

/// Shape or width mismatch between tensors or networks.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Violated precondition of an operation (non-scalar loss, missing gradient, ...).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Invalid user-supplied configuration value.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed file contents. The message carries the byte offset.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An expert produced a non-finite score.
class ScoringError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Every expert of a fixed-size mixture is already consumed.
class CapacityExhaustedError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Index outside the valid range.
class RangeError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

}  // namespace lmvae
