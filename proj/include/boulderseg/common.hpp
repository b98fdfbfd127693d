#pragma once

#include <stdexcept>
#include <string>

namespace bseg {

// Error taxonomy. The CLI maps these onto exit codes: usage problems are
// handled by the argument parser, DataError -> 2, NumericError -> 3.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised when training or a solve produces non-finite values. Never clamped.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void check_arg(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

inline void check_data(bool cond, const std::string& msg) {
    if (!cond) throw DataError(msg);
}

}  // namespace bseg
