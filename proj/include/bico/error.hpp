#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace bico {

enum class ErrorCode {
    // numlin
    NotPositiveDefinite,
    NonFiniteIterate,
    NonFiniteObjective,
    LineSearchFailure,
    NonFiniteInput,
    DimensionMismatch,
    // inner / hypergrad
    SingularSystem,
    StaleSolution,
    EmptyCandidates,
    IndexOutOfRange,
    // coreset / streaming / harness
    InsufficientData,
    SizeExceeded,
    NoEqualAdjacentPair,
    CompositionInfeasible,
    // expdesign
    SingularInformation,
    AlreadySelected,
    TooLarge,
    // io / cli
    ParseError,
    ShapeMismatch,
    EmptyDataset,
    ConfigError,
};

inline std::string_view module_of(ErrorCode code) {
    switch (code) {
        case ErrorCode::NotPositiveDefinite:
        case ErrorCode::NonFiniteIterate:
        case ErrorCode::NonFiniteObjective:
        case ErrorCode::LineSearchFailure:
        case ErrorCode::NonFiniteInput:
        case ErrorCode::DimensionMismatch: return "numlin";
        case ErrorCode::SingularSystem: return "inner";
        case ErrorCode::StaleSolution:
        case ErrorCode::EmptyCandidates:
        case ErrorCode::IndexOutOfRange: return "hypergrad";
        case ErrorCode::InsufficientData:
        case ErrorCode::SizeExceeded: return "coreset";
        case ErrorCode::NoEqualAdjacentPair:
        case ErrorCode::CompositionInfeasible: return "streaming";
        case ErrorCode::SingularInformation:
        case ErrorCode::AlreadySelected:
        case ErrorCode::TooLarge: return "expdesign";
        case ErrorCode::ParseError:
        case ErrorCode::ShapeMismatch:
        case ErrorCode::EmptyDataset:
        case ErrorCode::ConfigError: return "cli";
    }
    return "unknown";
}

inline std::string_view name_of(ErrorCode code) {
    switch (code) {
        case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
        case ErrorCode::NonFiniteIterate: return "NonFiniteIterate";
        case ErrorCode::NonFiniteObjective: return "NonFiniteObjective";
        case ErrorCode::LineSearchFailure: return "LineSearchFailure";
        case ErrorCode::NonFiniteInput: return "NonFiniteInput";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::SingularSystem: return "SingularSystem";
        case ErrorCode::StaleSolution: return "StaleSolution";
        case ErrorCode::EmptyCandidates: return "EmptyCandidates";
        case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
        case ErrorCode::InsufficientData: return "InsufficientData";
        case ErrorCode::SizeExceeded: return "SizeExceeded";
        case ErrorCode::NoEqualAdjacentPair: return "NoEqualAdjacentPair";
        case ErrorCode::CompositionInfeasible: return "CompositionInfeasible";
        case ErrorCode::SingularInformation: return "SingularInformation";
        case ErrorCode::AlreadySelected: return "AlreadySelected";
        case ErrorCode::TooLarge: return "TooLarge";
        case ErrorCode::ParseError: return "ParseError";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::EmptyDataset: return "EmptyDataset";
        case ErrorCode::ConfigError: return "ConfigError";
    }
    return "Unknown";
}

/// Configuration-class errors map to CLI exit code 2, everything else to 3.
inline bool is_config_error(ErrorCode code) {
    switch (code) {
        case ErrorCode::InsufficientData:
        case ErrorCode::SizeExceeded:
        case ErrorCode::CompositionInfeasible:
        case ErrorCode::ParseError:
        case ErrorCode::ShapeMismatch:
        case ErrorCode::EmptyDataset:
        case ErrorCode::ConfigError:
        case ErrorCode::DimensionMismatch:
        case ErrorCode::IndexOutOfRange:
        case ErrorCode::AlreadySelected:
        case ErrorCode::TooLarge: return true;
        default: return false;
    }
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string &message)
        : std::runtime_error(std::string(module_of(code)) + "." + std::string(name_of(code)) + ": " + message),
          code_(code) {}

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }

    /// Module-qualified code, e.g. "numlin.NotPositiveDefinite".
    [[nodiscard]] std::string qualified_code() const {
        return std::string(module_of(code_)) + "." + std::string(name_of(code_));
    }

private:
    ErrorCode code_;
};

}  // namespace bico
