#ifndef OSAKD_ERRORS_HPP
#define OSAKD_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace osakd {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Tensor shapes do not compose.
struct DimensionError : Error {
    using Error::Error;
};

/// Invalid user-facing configuration (k, lambda, batch size, ...).
struct ConfigError : Error {
    using Error::Error;
};

/// Malformed dataset or checkpoint file.
struct FormatError : Error {
    using Error::Error;
};

/// Non-finite values where finite ones are required.
struct NumericError : Error {
    using Error::Error;
};

/// API misuse (e.g. backward called twice on one tape).
struct ContractError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

} // namespace osakd

#endif
