#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace hytrec {

// Error taxonomy, mirrored by CLI exit codes.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor/layer dimension disagreements.
struct ShapeError : Error {
    using Error::Error;
};

// NaN/Inf escaping a public operation, or a diverging computation.
struct NumericError : Error {
    using Error::Error;
};

// Malformed input files, empty datasets, bad item ids.
struct DataError : Error {
    using Error::Error;
};

// Bad run configuration: unknown keys, invalid values.
struct ConfigError : Error {
    using Error::Error;
};

namespace detail {

inline void concat_into(std::ostringstream&) {}

template <typename T, typename... Rest>
void concat_into(std::ostringstream& os, const T& head, const Rest&... rest) {
    os << head;
    concat_into(os, rest...);
}

template <typename... Args>
std::string concat(const Args&... args) {
    std::ostringstream os;
    concat_into(os, args...);
    return os.str();
}

}  // namespace detail

}  // namespace hytrec

#define HYT_THROW(ErrorType, ...) \
    throw ErrorType(::hytrec::detail::concat(__VA_ARGS__))

#define HYT_CHECK(ErrorType, cond, ...)       \
    do {                                      \
        if (!(cond)) {                        \
            HYT_THROW(ErrorType, __VA_ARGS__); \
        }                                     \
    } while (0)

#define HYT_CHECK_SHAPE(cond, ...) HYT_CHECK(::hytrec::ShapeError, cond, __VA_ARGS__)
#define HYT_CHECK_DATA(cond, ...) HYT_CHECK(::hytrec::DataError, cond, __VA_ARGS__)
#define HYT_CHECK_CONFIG(cond, ...) HYT_CHECK(::hytrec::ConfigError, cond, __VA_ARGS__)
