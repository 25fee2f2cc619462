#pragma once

#include <stdexcept>
#include <string>

namespace gsedit {

/// Base class for every error raised by the library. The CLI maps the
/// concrete type onto a process exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input file (PLY header, PFM header, manifest schema).
class FormatError : public Error {
public:
    using Error::Error;
};

/// Parallel arrays disagree in length (e.g. sidecar rows vs PLY rows).
class ConsistencyError : public Error {
public:
    using Error::Error;
};

/// Caller-supplied value violates a precondition.
class ValidationError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Least-squares system has no unique solution.
class RankError : public Error {
public:
    using Error::Error;
};

/// Network failure or non-200 responses after all retry attempts.
class GuidanceTransportError : public Error {
public:
    GuidanceTransportError(const std::string& what, int attempts, int last_status)
        : Error(what), attempts_(attempts), last_status_(last_status) {}

    int attempts() const noexcept { return attempts_; }
    /// HTTP status of the final attempt, or 0 when no response arrived.
    int last_status() const noexcept { return last_status_; }

private:
    int attempts_;
    int last_status_;
};

/// Remote guidance answered 200 with a body that does not match the schema.
class GuidanceSchemaError : public Error {
public:
    using Error::Error;
};

}  // namespace gsedit
