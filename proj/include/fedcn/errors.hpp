#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fedcn {

// Precondition violations on public operations (shape mismatch, bad hyperparameter, ...).
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Input is well-formed but mathematically degenerate (e.g. zero-norm vector for cosine).
class DegenerateInput : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Operation invoked in the wrong lifecycle state (backward before forward, ...).
class StateError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& source, std::size_t line, const std::string& what)
        : std::runtime_error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class IoError : public std::runtime_error {
public:
    IoError(const std::string& path, const std::string& what)
        : std::runtime_error(path + ": " + what), path_(path) {}

    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

}  // namespace fedcn
