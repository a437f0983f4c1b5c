#pragma once

#include <stdexcept>
#include <string>

namespace mlk {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid dimensions, shapes or parameters passed to an operation.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Shape mismatch between two datasets, images or arrays.
class ShapeMismatch : public Error {
public:
    using Error::Error;
};

/// Malformed, truncated or inconsistent serialized data.
class FormatError : public Error {
public:
    using Error::Error;
};

/// File system failures.
class IoError : public Error {
public:
    using Error::Error;
};

/// NRMSE evaluated against a reference with zero value range.
class DegenerateRange : public Error {
public:
    using Error::Error;
};

/// Training produced a non-finite loss.
class TrainingDiverged : public Error {
public:
    TrainingDiverged(int epoch, const std::string& what)
        : Error(what), epoch_(epoch) {}
    int epoch() const noexcept { return epoch_; }

private:
    int epoch_;
};

}  // namespace mlk
