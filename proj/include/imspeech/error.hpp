#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace imspeech {

enum class ErrorKind {
    InvalidParameter,
    OutOfRange,
    Shape,
    InsufficientData,
    InvalidLabel,
    InvalidConfig,
    InvalidState,
    UnsupportedUpsample,
    UnsupportedSize,
    Stratification,
    Format,
    Io,
    Numeric,
    Degenerate,
    Divergence,
};

constexpr std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidParameter: return "invalid-parameter";
        case ErrorKind::OutOfRange: return "out-of-range";
        case ErrorKind::Shape: return "shape";
        case ErrorKind::InsufficientData: return "insufficient-data";
        case ErrorKind::InvalidLabel: return "invalid-label";
        case ErrorKind::InvalidConfig: return "invalid-config";
        case ErrorKind::InvalidState: return "invalid-state";
        case ErrorKind::UnsupportedUpsample: return "unsupported-upsample";
        case ErrorKind::UnsupportedSize: return "unsupported-size";
        case ErrorKind::Stratification: return "stratification";
        case ErrorKind::Format: return "format";
        case ErrorKind::Io: return "io";
        case ErrorKind::Numeric: return "numeric";
        case ErrorKind::Degenerate: return "degenerate-data";
        case ErrorKind::Divergence: return "divergence";
    }
    return "unknown";
}

/// Numeric failures (non-finite values, degenerate statistics, divergence)
/// as opposed to caller mistakes. The CLI maps these to exit code 2.
constexpr bool is_numeric(ErrorKind kind) {
    return kind == ErrorKind::Numeric || kind == ErrorKind::Degenerate ||
           kind == ErrorKind::Divergence;
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
    if (!cond) fail(kind, what);
}

}  // namespace imspeech
