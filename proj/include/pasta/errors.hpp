#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace pasta {

/// Base for all library errors. `exit_code()` maps onto the CLI contract
/// (1 usage/config, 2 data/format, 3 numerical failure).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual int exit_code() const noexcept { return 1; }
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// Caller broke a documented precondition (shape mismatch, bad index...).
class ContractViolation : public Error {
public:
    using Error::Error;
};

class DataError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 2; }
};

class FormatError : public DataError {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : DataError(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

class NumericalError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 3; }
};

}  // namespace pasta
