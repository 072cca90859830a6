#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fedae {

// Base for every error raised by the library. Callers that only want to
// report and exit can catch this one type.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Dimension or length mismatch between operands.
class ShapeError : public Error {
public:
    using Error::Error;
    static ShapeError mismatch(const std::string& what, std::size_t expected, std::size_t actual) {
        return ShapeError(what + ": expected size " + std::to_string(expected) + ", got " +
                          std::to_string(actual));
    }
};

// Bad argument, configuration or hyperparameter.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

// Non-finite values or degenerate arithmetic (zero denominators, 0^negative).
class NumericError : public Error {
public:
    using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public NumericError {
public:
    DivergenceError(int epoch, std::size_t batch, const std::string& detail)
        : NumericError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                       std::to_string(batch) + ": " + detail),
          epoch_(epoch), batch_(batch) {}

    int epoch() const noexcept { return epoch_; }
    std::size_t batch() const noexcept { return batch_; }

private:
    int epoch_;
    std::size_t batch_;
};

// Input file does not match the declared schema / config schema.
class SchemaError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// A client-side failure, tagged with where it happened.
class ClientError : public Error {
public:
    ClientError(int client_id, int round, const std::string& detail)
        : Error("client " + std::to_string(client_id) + ", round " + std::to_string(round) + ": " + detail),
          client_id_(client_id), round_(round) {}

    int client_id() const noexcept { return client_id_; }
    int round() const noexcept { return round_; }

private:
    int client_id_;
    int round_;
};

}  // namespace fedae
