#pragma once

#include <stdexcept>
#include <string>

namespace lmshock {

// Thrown when inputs violate a documented precondition (bad parameter values,
// malformed data rows, inconsistent configuration).
class input_error : public std::invalid_argument {
public:
    explicit input_error(const std::string& msg) : std::invalid_argument(msg) {}
};

// Thrown when a numerical routine cannot produce a meaningful result
// (rank deficiency, failed convergence, separation in a binary model).
class numeric_error : public std::runtime_error {
public:
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw input_error(msg);
}

} // namespace lmshock
