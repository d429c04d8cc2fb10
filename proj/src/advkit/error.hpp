#pragma once

#include <stdexcept>
#include <string>

namespace advkit {

// Error categories; mirrored by the status codes of the C API.
enum class ErrorCode {
    InvalidArgument = 1,
    Io = 2,
    Format = 3,
    Shape = 4,
    Diverged = 5,
    InsufficientData = 6,
    Runtime = 7,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& msg)
        : std::runtime_error(msg), code_(code) {}

    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& msg) {
    throw Error(code, msg);
}

} // namespace advkit
