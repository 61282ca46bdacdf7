#pragma once

#include <stdexcept>
#include <string>

namespace thomlab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ParseError : public Error {
public:
    explicit ParseError(const std::string& msg) : Error("parse error: " + msg) {}
};

/// Non-finite intermediate or out-of-domain point during field evaluation.
class EvaluationError : public Error {
public:
    EvaluationError(const std::string& msg, std::string subexpr)
        : Error("evaluation error: " + msg + " in `" + subexpr + "`"), subexpression(std::move(subexpr)) {}
    std::string subexpression;
};

class PreconditionError : public Error {
public:
    explicit PreconditionError(const std::string& msg) : Error("precondition violated: " + msg) {}
};

class InsufficientDataError : public Error {
public:
    explicit InsufficientDataError(const std::string& msg) : Error("insufficient data: " + msg) {}
};

/// Iterative solver did not reach its tolerance.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& msg, double last_residual)
        : Error("convergence failure: " + msg + " (residual " + std::to_string(last_residual) + ")"),
          residual(last_residual) {}
    double residual;
};

class UnsupportedError : public Error {
public:
    explicit UnsupportedError(const std::string& msg) : Error("unsupported configuration: " + msg) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

}  // namespace thomlab
