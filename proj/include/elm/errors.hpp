#pragma once

#include <stdexcept>
#include <string>

namespace elm {

// Error taxonomy shared by all modules. The CLI maps these onto exit codes,
// everything else just throws.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/dimension disagreement between operands.
struct DimError : Error {
    explicit DimError(const std::string& msg) : Error("dimension error: " + msg) {}
};

// Non-finite values where finite ones are required.
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error("numeric error: " + msg) {}
};

// Input outside the mathematical domain (negative probabilities, ...).
struct DomainError : Error {
    explicit DomainError(const std::string& msg) : Error("domain error: " + msg) {}
};

// Caller broke an API contract (backward on non-scalar, zero batches, ...).
struct ContractError : Error {
    explicit ContractError(const std::string& msg) : Error("contract error: " + msg) {}
};

// Unknown structure label, empty head set, broken nesting.
struct StructureError : Error {
    explicit StructureError(const std::string& msg) : Error("structure error: " + msg) {}
};

// Invalid model/run configuration.
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

// Filesystem and serialization failures.
struct IoError : Error {
    explicit IoError(const std::string& msg) : Error("io error: " + msg) {}
};

}  // namespace elm
