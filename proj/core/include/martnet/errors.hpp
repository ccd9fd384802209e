#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace martnet {

/// Base class for all recoverable martnet errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed expression source. `offset` is a 1-based column number.
class ParseError : public Error {
public:
    ParseError(const std::string& msg, std::size_t offset)
        : Error(msg + " (offset " + std::to_string(offset) + ")"), offset_(offset) {}
    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

/// Invalid run configuration. `path` names the offending JSON field.
class ConfigError : public Error {
public:
    ConfigError(const std::string& path, const std::string& msg)
        : Error(path + ": " + msg), path_(path) {}
    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

/// Non-finite or domain-violating arithmetic; `where` locates the failure
/// (tape node index, path (m,i), ...).
class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error(msg) {}
    NumericError(const std::string& msg, const std::string& where)
        : Error(msg + " at " + where) {}
};

/// Contract misuse: wrong ensemble kind, batch larger than M, and so on.
class UsageError : public Error {
public:
    using Error::Error;
};

/// Reflection/projection geometry failure.
class GeometryError : public Error {
public:
    using Error::Error;
};

}  // namespace martnet
