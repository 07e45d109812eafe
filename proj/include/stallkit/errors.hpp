#pragma once

#include <stdexcept>
#include <string>

namespace stallkit {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : Error { using Error::Error; };
struct InfeasibleVars : Error { using Error::Error; };
struct NoFeasiblePoint : Error { using Error::Error; };
struct MgfUndefined : Error { using Error::Error; };
struct Unstable : Error { using Error::Error; };
struct ConstraintViolated : Error { using Error::Error; };
struct LineSearchFailed : Error { using Error::Error; };
struct NoProgress : Error { using Error::Error; };
struct FileTooLarge : Error { using Error::Error; };
struct UnstableDetected : Error { using Error::Error; };
struct NoSamples : Error { using Error::Error; };
struct UnknownFileId : Error { using Error::Error; };

struct ParseError : Error {
    ParseError(std::size_t line, const std::string& reason)
        : Error("line " + std::to_string(line) + ": " + reason), line(line)
    {
    }
    std::size_t line;
};

}  // namespace stallkit
