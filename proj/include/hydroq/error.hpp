#pragma once

#include <stdexcept>
#include <string>

namespace hydroq {

/// Base class for every error raised by the library. The CLI prints what()
/// and exits nonzero.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    ParseError(const std::string& path, std::size_t line, const std::string& what)
        : Error(path + ":" + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Raised when training produces a NaN or infinite loss.
class DivergenceError : public Error {
public:
    using Error::Error;
};

} // namespace hydroq
