#pragma once

#include <stdexcept>
#include <string>

namespace embedheight {

/// Malformed or unsupported file content (bad magic, truncated payload, ...).
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Filesystem or network failure.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Violated precondition or inconsistent arguments.
struct ValueError : std::invalid_argument {
    explicit ValueError(const std::string& msg) : std::invalid_argument(msg) {}
};

}  // namespace embedheight
