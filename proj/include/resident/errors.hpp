#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace resident {

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A caller broke an operation's precondition (shape mismatch, bad id, ...).
struct ContractError : Error {
    using Error::Error;
};

// An invalid configuration (model or training) was supplied.
struct ConfigError : Error {
    using Error::Error;
};

// A model file could not be decoded. `offset` is the byte position at
// which decoding failed.
struct FormatError : Error {
    std::size_t offset;
    FormatError(const std::string& msg, std::size_t at)
        : Error(msg + " (at byte offset " + std::to_string(at) + ")"), offset(at) {}
};

// A text input (TSV) could not be parsed. `line` is 1-based.
struct ParseError : Error {
    std::size_t line;
    ParseError(const std::string& msg, std::size_t line_no)
        : Error(msg + " (line " + std::to_string(line_no) + ")"), line(line_no) {}
};

// Bad command-line invocation; the CLI maps this to exit code 2.
struct UsageError : Error {
    using Error::Error;
};

}  // namespace resident
