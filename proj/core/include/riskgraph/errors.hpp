#pragma once

#include <stdexcept>
#include <string>

namespace riskgraph {

/// Base class for every error raised by the library. The CLI maps each
/// subclass onto a fixed process exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or hyperparameters (exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Tensor or vector dimensions disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An agent id (or other key) was not found.
class NotFoundError : public Error {
 public:
  using Error::Error;
};

/// A scenario, manifest or model file could not be parsed or violates an
/// invariant. The message names the offending field and index.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// A file could not be read or written (exit code 3).
class IoError : public Error {
 public:
  using Error::Error;
};

/// A non-finite value appeared in a forward or backward pass.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Training diverged or could not start (exit code 4).
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// The scenario generator could not satisfy its configuration.
class GenerationError : public Error {
 public:
  using Error::Error;
};

class EvaluationError : public Error {
 public:
  using Error::Error;
};

}  // namespace riskgraph
