#pragma once

#include <stdexcept>
#include <string>

namespace xreg {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct BehindCamera : Error {
  explicit BehindCamera(const std::string& msg = "point has non-positive depth") : Error(msg) {}
};
struct InvalidDepth : Error {
  explicit InvalidDepth(const std::string& msg = "depth is non-positive or invalid") : Error(msg) {}
};
struct EmptyInput : Error {
  explicit EmptyInput(const std::string& msg = "empty input") : Error(msg) {}
};
struct PartitionError : Error {
  explicit PartitionError(const std::string& msg = "grid does not divide image") : Error(msg) {}
};
struct ShapeError : Error {
  explicit ShapeError(const std::string& msg = "tensor shape mismatch") : Error(msg) {}
};
struct EmptyMemory : Error {
  explicit EmptyMemory(const std::string& msg = "attention memory set is empty") : Error(msg) {}
};
struct ZeroVector : Error {
  explicit ZeroVector(const std::string& msg = "cannot normalize a zero vector") : Error(msg) {}
};
struct TooFewPoints : Error {
  explicit TooFewPoints(const std::string& msg = "too few correspondences") : Error(msg) {}
};
struct DegenerateConfiguration : Error {
  explicit DegenerateConfiguration(const std::string& msg = "degenerate point configuration") : Error(msg) {}
};
struct RegistrationFailed : Error {
  explicit RegistrationFailed(const std::string& msg = "no consensus model found") : Error(msg) {}
};
struct EmptyDataset : Error {
  explicit EmptyDataset(const std::string& msg = "no qualifying pairs") : Error(msg) {}
};
struct GenerationError : Error {
  explicit GenerationError(const std::string& msg = "scene generation produced no visible geometry") : Error(msg) {}
};
struct TrainingDiverged : Error {
  explicit TrainingDiverged(const std::string& msg = "loss became non-finite") : Error(msg) {}
};
struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(msg) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

}  // namespace xreg
