#pragma once

#include <stdexcept>
#include <string>

namespace levyheat {

enum class ErrorCode {
    QuadratureUnderresolved,
    DivergentResolvent,
    NoRoot,
    InvalidArgument,
    GridMismatch,
    AllocationLimit,
    OffsetOutOfRange,
    HorizonExceeded,
    TruncationTooSmall,
    InsufficientRange,
    NotApplicable,
    ConfigInvalid,
    Io,
};

inline const char* error_name(ErrorCode c) {
    switch (c) {
    case ErrorCode::QuadratureUnderresolved: return "quadrature underresolved";
    case ErrorCode::DivergentResolvent: return "divergent resolvent";
    case ErrorCode::NoRoot: return "no root";
    case ErrorCode::InvalidArgument: return "invalid argument";
    case ErrorCode::GridMismatch: return "grid mismatch";
    case ErrorCode::AllocationLimit: return "allocation limit";
    case ErrorCode::OffsetOutOfRange: return "offset out of range";
    case ErrorCode::HorizonExceeded: return "horizon exceeded";
    case ErrorCode::TruncationTooSmall: return "truncation too small";
    case ErrorCode::InsufficientRange: return "insufficient range";
    case ErrorCode::NotApplicable: return "not applicable";
    case ErrorCode::ConfigInvalid: return "config invalid";
    case ErrorCode::Io: return "io error";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(error_name(code)) + ": " + what), code_(code) {}
    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool ok, const std::string& what) {
    if (!ok) fail(ErrorCode::InvalidArgument, what);
}

}  // namespace levyheat
