#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace swae {

// Every library error maps onto one CLI exit code.
enum class ErrorCode : int {
    kConfig = 2,
    kIo = 3,
    kShape = 4,
    kNumerical = 5,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& what) : Error(ErrorCode::kShape, what) {}
};

class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& what) : Error(ErrorCode::kNumerical, what) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ErrorCode::kConfig, what) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error(ErrorCode::kIo, what) {}
};

/// Malformed binary file. Carries the byte offset where parsing failed.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : Error(ErrorCode::kIo, what + " at offset " + std::to_string(offset)), offset_(offset) {}
    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

/// Checkpoint parameters do not match the requested architecture.
class ArchMismatchError : public Error {
public:
    ArchMismatchError(const std::string& what, std::string tensor_name)
        : Error(ErrorCode::kShape, what), tensor_name_(std::move(tensor_name)) {}
    const std::string& tensor_name() const noexcept { return tensor_name_; }

private:
    std::string tensor_name_;
};

}  // namespace swae
