#pragma once

#include <stdexcept>
#include <string>

namespace dtfixup {

// Shape or rank mismatch between operands.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// API misuse: wrong tape, missing precondition, empty input stream.
class UsageError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Invalid experiment / model configuration.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Non-finite value where a finite one is required.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace dtfixup
