#pragma once

#include <stdexcept>
#include <string>

namespace cpf {

// Error taxonomy used across the library. Each maps to a distinct CLI exit
// path: config errors are caught at validation time, numeric errors abort a
// run with diagnostics.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct DimensionError : Error {
    explicit DimensionError(const std::string& msg) : Error("dimension error: " + msg) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("configuration error: " + msg) {}
};

struct InputError : Error {
    explicit InputError(const std::string& msg) : Error("input error: " + msg) {}
};

struct ContractError : Error {
    explicit ContractError(const std::string& msg) : Error("contract error: " + msg) {}
};

struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error("numeric-health error: " + msg) {}
};

} // namespace cpf
