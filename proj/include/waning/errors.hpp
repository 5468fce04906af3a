#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace waning {

enum class ErrorKind {
    MalformedInput,
    InvalidCounts,
    EmptyInput,
    ZeroEvents,
    WrongMode,
    DomainError,
    DegenerateResampling,
    Infeasible,
    ZeroStratum,
    ZeroDenominator,
    PreconditionViolation,
};

constexpr std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::MalformedInput: return "MalformedInput";
        case ErrorKind::InvalidCounts: return "InvalidCounts";
        case ErrorKind::EmptyInput: return "EmptyInput";
        case ErrorKind::ZeroEvents: return "ZeroEvents";
        case ErrorKind::WrongMode: return "WrongMode";
        case ErrorKind::DomainError: return "DomainError";
        case ErrorKind::DegenerateResampling: return "DegenerateResampling";
        case ErrorKind::Infeasible: return "Infeasible";
        case ErrorKind::ZeroStratum: return "ZeroStratum";
        case ErrorKind::ZeroDenominator: return "ZeroDenominator";
        case ErrorKind::PreconditionViolation: return "PreconditionViolation";
    }
    return "Unknown";
}

// All library failures are reported through this type; kind() tells callers
// (notably the CLI and the power study) how to classify them.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

} // namespace waning
