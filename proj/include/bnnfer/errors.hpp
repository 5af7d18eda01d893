#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace bnnfer {

// Every library failure derives from Error; the CLI maps the category to an
// exit code (validation/usage/dimension -> 1, io/parse/format -> 2,
// training -> 3).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class DimensionError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class UsageError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class IoError : public Error {
public:
    using Error::Error;
};

class FormatError : public IoError {
public:
    using IoError::IoError;
};

class ParseError : public IoError {
public:
    ParseError(std::size_t line, const std::string& what)
        : IoError("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class TrainingError : public Error {
public:
    using Error::Error;
};

}  // namespace bnnfer
