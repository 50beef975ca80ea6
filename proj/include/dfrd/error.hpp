#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dfrd {

// Base class for all errors raised by this library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A precondition or argument violation (bad dimensions, empty inputs, ...).
class InvalidInput : public Error {
public:
    using Error::Error;
};

// Filesystem / serialization failure.
class IoError : public Error {
public:
    using Error::Error;
};

// Malformed or out-of-contract wire traffic. Carries a short machine
// readable code alongside the human readable message.
class ProtocolError : public Error {
public:
    ProtocolError(std::string code, const std::string& msg)
        : Error(code + ": " + msg), code_(std::move(code)) {}
    const std::string& code() const { return code_; }

private:
    std::string code_;
};

// A teacher became unreachable or answered with an ERROR frame.
class TransferError : public Error {
public:
    using Error::Error;
};

// Training hit a non-finite loss. Records the epoch where it happened.
class TrainingDiverged : public Error {
public:
    TrainingDiverged(std::size_t epoch, const std::string& msg)
        : Error("training diverged at epoch " + std::to_string(epoch) + ": " + msg),
          epoch_(epoch) {}
    std::size_t epoch() const { return epoch_; }

private:
    std::size_t epoch_;
};

}  // namespace dfrd
