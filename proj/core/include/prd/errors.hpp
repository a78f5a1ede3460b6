#pragma once

#include <stdexcept>
#include <string>

namespace prd {

// Error taxonomy used across the library:
//   std::domain_error  - caller passed a value outside an operation's domain
//   NumericError       - a computation produced a non-finite or degenerate value
//   ProtocolError      - batch construction contract violated (e.g. two-view pairing)
//   StateError         - session bookkeeping inconsistency (missing prototype, stale teacher)
//   ConfigError        - invalid run configuration

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

struct ProtocolError : std::runtime_error {
    explicit ProtocolError(const std::string& what) : std::runtime_error(what) {}
};

struct StateError : std::runtime_error {
    explicit StateError(const std::string& what) : std::runtime_error(what) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace prd
