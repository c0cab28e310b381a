#pragma once

#include <stdexcept>
#include <string>

namespace nestopt {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Spec / IR construction errors.
struct InvalidSpec : Error {
  using Error::Error;
};
struct Unbounded : Error {
  using Error::Error;
};
struct CapExceeded : Error {
  using Error::Error;
};

// Transform errors.
struct TransformError : Error {
  using Error::Error;
};
struct NonDivisible : TransformError {
  using TransformError::TransformError;
};
struct NotPermutable : TransformError {
  using TransformError::TransformError;
};
struct NotAdjacent : TransformError {
  using TransformError::TransformError;
};
struct BadPartition : TransformError {
  using TransformError::TransformError;
};
struct KernelAxis : TransformError {
  using TransformError::TransformError;
};
struct ChannelMismatch : TransformError {
  using TransformError::TransformError;
};
struct IterNotFound : TransformError {
  using TransformError::TransformError;
};
struct ParseError : Error {
  using Error::Error;
};

// Interpreter / engine errors.
struct UnboundTensor : Error {
  using Error::Error;
};
struct RankMismatch : Error {
  using Error::Error;
};
struct IndexOutOfRange : Error {
  using Error::Error;
};
struct ShapeMismatch : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};

}  // namespace nestopt
