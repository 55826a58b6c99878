#include "eigmeta/errors.hpp"

namespace eigmeta {

const char* to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::Config: return "ConfigError";
        case ErrorKind::ShapeMismatch: return "ShapeMismatch";
        case ErrorKind::DimensionMismatch: return "DimensionMismatch";
        case ErrorKind::NonScalarLoss: return "NonScalarLoss";
        case ErrorKind::VersionMismatch: return "VersionMismatch";
        case ErrorKind::Io: return "IoError";
        case ErrorKind::Parse: return "ParseError";
        case ErrorKind::NonBinaryLabel: return "NonBinaryLabel";
        case ErrorKind::DegenerateColumn: return "DegenerateColumn";
        case ErrorKind::InsufficientInstances: return "InsufficientInstances";
        case ErrorKind::EmptySupport: return "EmptySupport";
        case ErrorKind::EmptyClass: return "EmptyClass";
        case ErrorKind::NoAnomalies: return "NoAnomalies";
        case ErrorKind::NotSingleAnomaly: return "NotSingleAnomaly";
        case ErrorKind::NoNormalInstances: return "NoNormalInstances";
        case ErrorKind::NotPositiveDefinite: return "NotPositiveDefinite";
        case ErrorKind::SingularTriangular: return "SingularTriangular";
        case ErrorKind::NoConvergence: return "NoConvergence";
        case ErrorKind::DegenerateAnomaly: return "DegenerateAnomaly";
        case ErrorKind::NumericalFailure: return "NumericalFailure";
    }
    return "Error";
}

int exit_code(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::Config:
        case ErrorKind::ShapeMismatch:
        case ErrorKind::DimensionMismatch:
        case ErrorKind::NonScalarLoss:
        case ErrorKind::VersionMismatch:
            return 1;
        case ErrorKind::Io:
        case ErrorKind::Parse:
        case ErrorKind::NonBinaryLabel:
        case ErrorKind::DegenerateColumn:
        case ErrorKind::InsufficientInstances:
        case ErrorKind::EmptySupport:
        case ErrorKind::EmptyClass:
        case ErrorKind::NoAnomalies:
        case ErrorKind::NotSingleAnomaly:
        case ErrorKind::NoNormalInstances:
            return 2;
        case ErrorKind::NotPositiveDefinite:
        case ErrorKind::SingularTriangular:
        case ErrorKind::NoConvergence:
        case ErrorKind::DegenerateAnomaly:
        case ErrorKind::NumericalFailure:
            return 3;
    }
    return 3;
}

}  // namespace eigmeta
