#pragma once

#include <stdexcept>
#include <string>

namespace dilie {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Operand shapes do not agree.
struct DimensionError : Error {
    using Error::Error;
};

// A value-level precondition failed (bad config, bad argument).
struct ArgumentError : Error {
    using Error::Error;
};

// File could not be read, written or decoded.
struct IoError : Error {
    using Error::Error;
};

// A weights blob or other persisted artifact failed its checksum/shape check.
struct IntegrityError : Error {
    using Error::Error;
};

// A required (path_a, path_b) score was missing from an external score file.
struct LookupError : Error {
    using Error::Error;
};

// Dataset scan produced nothing usable.
struct DatasetError : Error {
    using Error::Error;
};

// An optimization run diverged. Carries the last iteration whose loss was
// still finite so callers can report how far the run got.
struct RunError : Error {
    RunError(const std::string& msg, int last_finite_iter)
        : Error(msg), last_finite_iteration(last_finite_iter) {}
    int last_finite_iteration = -1;
};

}  // namespace dilie
