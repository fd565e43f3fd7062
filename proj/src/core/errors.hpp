#pragma once

#include <stdexcept>
#include <string>

namespace ods {

// Caller broke a documented precondition.
class ContractViolation : public std::logic_error {
public:
    explicit ContractViolation(const std::string& what) : std::logic_error(what) {}
};

// A computation produced NaN/Inf or an otherwise unusable value.
class NumericFailure : public std::runtime_error {
public:
    explicit NumericFailure(const std::string& what) : std::runtime_error(what) {}
};

class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace ods

#define ODS_REQUIRE(cond, msg)                        \
    do {                                              \
        if (!(cond)) throw ods::ContractViolation(msg); \
    } while (0)
