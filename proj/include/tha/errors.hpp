#pragma once

#include <stdexcept>
#include <string>

namespace tha {

// Input/config problems the caller can fix. CLI maps these to exit code 2.
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// File contents that do not match a declared format.
struct ParseError : ValidationError {
    explicit ParseError(const std::string& msg) : ValidationError(msg) {}
};

struct ConfigError : ValidationError {
    explicit ConfigError(const std::string& msg) : ValidationError(msg) {}
};

// Runtime failures (I/O, numerical degeneracy, divergence). CLI exit code 3.
struct RuntimeError : std::runtime_error {
    explicit RuntimeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : RuntimeError {
    explicit IoError(const std::string& msg) : RuntimeError(msg) {}
};

struct TopologyError : RuntimeError {
    explicit TopologyError(const std::string& msg) : RuntimeError(msg) {}
};

struct RegistrationError : RuntimeError {
    explicit RegistrationError(const std::string& msg) : RuntimeError(msg) {}
};

struct PoseError : RuntimeError {
    explicit PoseError(const std::string& msg) : RuntimeError(msg) {}
};

struct TriangulationError : RuntimeError {
    explicit TriangulationError(const std::string& msg) : RuntimeError(msg) {}
};

struct MetricError : RuntimeError {
    explicit MetricError(const std::string& msg) : RuntimeError(msg) {}
};

struct TrainingError : RuntimeError {
    explicit TrainingError(const std::string& msg) : RuntimeError(msg) {}
};

struct BaselineError : RuntimeError {
    explicit BaselineError(const std::string& msg) : RuntimeError(msg) {}
};

}  // namespace tha
