#pragma once

#include <stdexcept>
#include <string>

namespace stp {

/// Failure categories, mapped one-to-one onto CLI exit codes.
enum class ErrorCategory { parse = 2, validation = 3, numerical = 4 };

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& what)
        : std::runtime_error(what), category_(category) {}
    ErrorCategory category() const noexcept { return category_; }

private:
    ErrorCategory category_;
};

/// Malformed or unknown configuration content.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ErrorCategory::parse, what) {}
};

/// A well-formed input that violates a model invariant or a precondition.
class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& what) : Error(ErrorCategory::validation, what) {}
};

/// Numerical breakdown: non-finite coefficients, CFL refusal, non-convergence.
class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& what) : Error(ErrorCategory::numerical, what) {}
};

}  // namespace stp
