#pragma once

#include <stdexcept>
#include <string>

namespace portrait {

// Shape/width mismatches between tensors, layers or files.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};

// Inputs outside the mathematical domain of an operation (out-of-cube
// points, non-unit directions, bad sample counts).
struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& msg) : std::runtime_error("domain error: " + msg) {}
};

// Calls made in the wrong order (backward before forward, fine stage
// without a coarse checkpoint).
struct StateError : std::runtime_error {
    explicit StateError(const std::string& msg) : std::runtime_error("state error: " + msg) {}
};

// Non-finite values where finite ones are required.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};

// Dataset files that fail validation.
struct DatasetError : std::runtime_error {
    explicit DatasetError(const std::string& msg) : std::runtime_error("dataset error: " + msg) {}
};

// Bad configuration files or values.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

// I/O failures (missing files, unreadable images, write errors).
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error("io error: " + msg) {}
};

}  // namespace portrait
