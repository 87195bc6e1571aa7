// SPDX-License-Identifier: Apache-2.0
//
// lgmimo: deep MIMO detection and learngene transfer workbench
// ------------------------------------------------------------------------

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lgmimo {

enum class ErrorKind {
    RankDeficient,
    SearchSpaceTooLarge,
    LengthMismatch,
    ShapeMismatch,
    AnchorMismatch,
    FormatVersionMismatch,
    CorruptBlob,
    EmptyLog,
    StrategyUnavailable,
    IncompatibleGeometry,
    MissingSource,
    MissingUnit,
    ZeroVariance,
    DegenerateSER,
    InvalidArgument,
    ConfigError,
    IoError,
};

inline constexpr std::string_view to_string(ErrorKind kind) noexcept
{
    switch (kind) {
    case ErrorKind::RankDeficient: return "RankDeficient";
    case ErrorKind::SearchSpaceTooLarge: return "SearchSpaceTooLarge";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::AnchorMismatch: return "AnchorMismatch";
    case ErrorKind::FormatVersionMismatch: return "FormatVersionMismatch";
    case ErrorKind::CorruptBlob: return "CorruptBlob";
    case ErrorKind::EmptyLog: return "EmptyLog";
    case ErrorKind::StrategyUnavailable: return "StrategyUnavailable";
    case ErrorKind::IncompatibleGeometry: return "IncompatibleGeometry";
    case ErrorKind::MissingSource: return "MissingSource";
    case ErrorKind::MissingUnit: return "MissingUnit";
    case ErrorKind::ZeroVariance: return "ZeroVariance";
    case ErrorKind::DegenerateSER: return "DegenerateSER";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::IoError: return "IoError";
    }
    return "Unknown";
}

// All library failures surface as this exception; `kind()` is the stable,
// machine-readable part.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind)
    {
    }

    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what)
{
    throw Error(kind, what);
}

inline void require(bool condition, ErrorKind kind, const std::string& what)
{
    if (!condition)
        fail(kind, what);
}

} // namespace lgmimo
