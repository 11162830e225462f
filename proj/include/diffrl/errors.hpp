#pragma once

#include <cstdarg>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace diffrl {

inline std::string strfmt(const char* fmt, ...) {
    va_list ap;
    va_start(ap, fmt);
    va_list ap2;
    va_copy(ap2, ap);
    int n = std::vsnprintf(nullptr, 0, fmt, ap);
    va_end(ap);
    std::string out;
    if (n > 0) {
        out.resize(static_cast<size_t>(n));
        std::vsnprintf(out.data(), out.size() + 1, fmt, ap2);
    }
    va_end(ap2);
    return out;
}

// Base class for everything we throw on purpose.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape mismatch between what an op expects and what it got.
struct DimensionError : Error {
    DimensionError(const std::string& what, long expected, long actual)
        : Error(strfmt("%s: expected %ld, got %ld", what.c_str(), expected, actual)) {}
};

// NaN or inf detected in a tensor; layer_index < 0 means "not layer specific".
struct NonFiniteError : Error {
    int layer_index;
    explicit NonFiniteError(const std::string& where, int layer = -1)
        : Error(layer >= 0 ? strfmt("non-finite value in %s (layer %d)", where.c_str(), layer)
                           : strfmt("non-finite value in %s", where.c_str())),
          layer_index(layer) {}
};

// Scalar argument outside its legal range (time outside [0,1], lambda <= 0, ...).
struct DomainError : Error {
    explicit DomainError(const std::string& msg) : Error(msg) {}
};

// Malformed file, bad magic, version mismatch, unknown config key.
struct FormatError : Error {
    explicit FormatError(const std::string& msg) : Error(msg) {}
};

}  // namespace diffrl
