#pragma once

#include <stdexcept>
#include <string>

namespace incdet {

// Bad or inconsistent configuration (counts, rates, file references).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Operation invoked at the wrong model stage (base vs. branched).
struct StageError : std::runtime_error {
    explicit StageError(const std::string& msg) : std::runtime_error(msg) {}
};

// Input data violates a declared contract (label space, split purity).
struct DataContractError : std::runtime_error {
    explicit DataContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/argument shape mismatch.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// File I/O, parse, version or integrity failures.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training produced a non-finite loss; message names the component.
struct NonFiniteLossError : std::runtime_error {
    explicit NonFiniteLossError(const std::string& component)
        : std::runtime_error("non-finite loss in component: " + component),
          component_(component) {}
    const std::string& component() const { return component_; }

private:
    std::string component_;
};

}  // namespace incdet
