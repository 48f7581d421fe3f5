#pragma once

#include <stdexcept>
#include <string>

namespace ordistill {

enum class ErrorKind {
    Shape,     // incompatible extents
    Numeric,   // NaN / Inf in a forward or backward value
    Index,     // label or index out of range
    Contract,  // API misuse (wrong stage, detached tape, ...)
    Config,    // invalid configuration
    Io,        // filesystem failure
    Format,    // malformed input file
    Corrupt,   // unreadable artifact (checkpoint, tensor blob)
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

}  // namespace ordistill
