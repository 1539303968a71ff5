#pragma once

#include <stdexcept>
#include <string>

namespace mrs {

/// Invalid model, basis or run configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A density or likelihood was asked to evaluate non-finite input.
class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller violated an operation's preconditions (empty store, instance too large, ...).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IngestionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The sampler could not find a starting point with finite log-posterior.
class InitializationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EvidenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mrs
