#pragma once

#include <stdexcept>
#include <string>

namespace eigmeta {

// Error categories drive the CLI exit code: usage/config -> 1, data -> 2,
// numerical -> 3.
enum class ErrorKind {
    // usage / configuration
    Config,
    ShapeMismatch,
    DimensionMismatch,
    NonScalarLoss,
    VersionMismatch,
    // data
    Io,
    Parse,
    NonBinaryLabel,
    DegenerateColumn,
    InsufficientInstances,
    EmptySupport,
    EmptyClass,
    NoAnomalies,
    NotSingleAnomaly,
    NoNormalInstances,
    // numerical
    NotPositiveDefinite,
    SingularTriangular,
    NoConvergence,
    DegenerateAnomaly,
    NumericalFailure,
};

const char* to_string(ErrorKind kind) noexcept;

// Exit-code category of an error kind (1, 2 or 3).
int exit_code(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace eigmeta
