#pragma once

#include <stdexcept>
#include <string>

namespace segvae {

// Exit codes used by the CLI. Stable contract:
//   0 ok, 2 usage/config, 3 I/O, 4 divergence, 5 budget, 6 gradcheck failure.
enum class ExitCode : int {
    ok = 0,
    usage = 2,
    io = 3,
    divergence = 4,
    budget = 5,
    gradcheck = 6,
};

/// Base of all toolkit errors; carries the CLI exit code of its category.
class Error : public std::runtime_error {
public:
    Error(ExitCode code, const std::string& msg)
        : std::runtime_error(msg), code_(code) {}
    [[nodiscard]] ExitCode exit_code() const noexcept { return code_; }

private:
    ExitCode code_;
};

/// Bad user arguments, config keys, or violated config invariants.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(ExitCode::usage, "config: " + msg) {}
};

/// Degenerate or semantically invalid in-memory input (all-zero volume, bad labels).
class DataError : public Error {
public:
    explicit DataError(const std::string& msg) : Error(ExitCode::usage, "data: " + msg) {}
};

/// Out-of-bounds crop or patch window.
class BoundsError : public Error {
public:
    explicit BoundsError(const std::string& msg) : Error(ExitCode::usage, "bounds: " + msg) {}
};

/// Mismatched tensor or volume shapes.
class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& msg) : Error(ExitCode::usage, "shape: " + msg) {}
};

/// Malformed file content (bad magic, header fields, truncation).
class FormatError : public Error {
public:
    explicit FormatError(const std::string& msg) : Error(ExitCode::io, "format: " + msg) {}
};

/// Well-formed file that uses a feature outside the supported subset.
class UnsupportedError : public Error {
public:
    explicit UnsupportedError(const std::string& msg) : Error(ExitCode::io, "unsupported: " + msg) {}
};

/// Filesystem failure (cannot open, read, or write).
class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error(ExitCode::io, "io: " + msg) {}
};

/// Forward/backward invoked out of order, or missing saved activations.
class StateError : public Error {
public:
    explicit StateError(const std::string& msg) : Error(ExitCode::usage, "state: " + msg) {}
};

/// Non-finite loss during training; names the epoch and sample.
class DivergenceError : public Error {
public:
    explicit DivergenceError(const std::string& msg) : Error(ExitCode::divergence, "divergence: " + msg) {}
};

/// Live tensor bytes exceeded the installed budget; names the allocation site.
class BudgetError : public Error {
public:
    explicit BudgetError(const std::string& msg) : Error(ExitCode::budget, "budget: " + msg) {}
};

}  // namespace segvae
