#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rmn {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// A shape with zero or negative extents.
class InvalidShapeError : public ShapeError {
 public:
  using ShapeError::ShapeError;
};

// Layer hyper-parameters that cannot produce a valid output.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class DegenerateBatchError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class BuildError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// Caller violated a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

class MissingTapeError : public ContractError {
 public:
  using ContractError::ContractError;
};

class LabelError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class CheckpointFormatError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class CheckpointTruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class UnknownParameterError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

}  // namespace rmn
