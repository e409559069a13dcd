#pragma once

#include <stdexcept>
#include <string>

namespace divscan {

/// Base class for all errors raised by this library.
class DivscanError : public std::runtime_error {
public:
    explicit DivscanError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Filesystem-level failures: missing files, unreadable/unwritable paths.
class IoError : public DivscanError {
public:
    explicit IoError(const std::string& msg) : DivscanError(msg) {}
};

/// Malformed or out-of-contract inputs: bad shapes, ranges, schemas.
class ValidationError : public DivscanError {
public:
    explicit ValidationError(const std::string& msg) : DivscanError(msg) {}
};

/// Numerical failures that must never surface as silent NaNs.
class ComputationError : public DivscanError {
public:
    explicit ComputationError(const std::string& msg) : DivscanError(msg) {}
};

} // namespace divscan
