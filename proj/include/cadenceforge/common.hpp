#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace cforge {

// Thrown when caller-supplied data or config violates a documented invariant.
// The CLI maps this to exit code 2; everything else unexpected maps to 1.
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ValidationError(msg);
}

inline constexpr const char* kVersion = "0.1.0";

}  // namespace cforge
