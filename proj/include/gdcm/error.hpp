#pragma once

#include <stdexcept>
#include <string>

namespace gdcm {

/// Failure category. The numeric values double as CLI exit codes.
enum class ErrorKind : int {
    usage = 1,
    data = 2,
    numerical = 3,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

/// Malformed input: dimension mismatch, invalid probabilities, bad files.
class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

/// Non-finite objective or similar breakdown inside an algorithm.
class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& what) : Error(ErrorKind::numerical, what) {}
};

class UsageError : public Error {
public:
    explicit UsageError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

}  // namespace gdcm
