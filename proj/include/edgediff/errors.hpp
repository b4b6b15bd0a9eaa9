#pragma once

#include <stdexcept>
#include <string>

namespace edgediff {

// Error taxonomy, mapped to CLI exit codes: usage/config -> 1, data -> 2, numeric -> 3.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape/dimension mismatches are a data error subclass.
struct DimError : DataError {
    using DataError::DataError;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require_dims(bool ok, const std::string& msg) {
    if (!ok) throw DimError(msg);
}

}  // namespace edgediff
