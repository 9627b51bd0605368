#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cvr {

enum class ErrorKind {
    usage,
    dimension,
    geometry,
    precondition,
    numeric,
    state,
    parse,
    config,
    index,
    io,
};

const char* error_kind_name(ErrorKind kind);

// Base of every error raised by the library. what() carries a one-line
// message; kind() lets callers (the CLI in particular) map to exit codes.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class UsageError : public Error {
public:
    explicit UsageError(const std::string& m) : Error(ErrorKind::usage, m) {}
};

class DimensionError : public Error {
public:
    explicit DimensionError(const std::string& m) : Error(ErrorKind::dimension, m) {}
};

class GeometryError : public Error {
public:
    explicit GeometryError(const std::string& m) : Error(ErrorKind::geometry, m) {}
};

class PreconditionError : public Error {
public:
    explicit PreconditionError(const std::string& m) : Error(ErrorKind::precondition, m) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& m) : Error(ErrorKind::numeric, m) {}
};

class StateError : public Error {
public:
    explicit StateError(const std::string& m) : Error(ErrorKind::state, m) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& m) : Error(ErrorKind::config, m) {}
};

class IndexError : public Error {
public:
    explicit IndexError(const std::string& m) : Error(ErrorKind::index, m) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& m) : Error(ErrorKind::io, m) {}
};

class ParseError : public Error {
public:
    ParseError(const std::string& m, std::size_t offset)
        : Error(ErrorKind::parse, m + " (at byte offset " + std::to_string(offset) + ")"),
          offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

}  // namespace cvr
