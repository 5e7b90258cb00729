#pragma once

#include <stdexcept>
#include <string>

namespace doseml {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Tensor or image dimensions do not match what an operation requires.
struct ShapeError : Error {
    using Error::Error;
};

/// A parameter value is outside its legal range.
struct ArgumentError : Error {
    using Error::Error;
};

/// Non-finite values appeared during optimization.
struct DivergenceError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

/// Dataset-level problems (too few patients, empty field, ...).
struct DataError : Error {
    using Error::Error;
};

}  // namespace doseml
