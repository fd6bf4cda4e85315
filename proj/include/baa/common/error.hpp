#pragma once

#include <stdexcept>
#include <string>

namespace baa {

// Caller handed us something that violates an operation's preconditions.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Point configuration too degenerate to define a rigid alignment.
class DegenerateGeometry : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Too few confident correspondences to estimate a pose.
class LowConfidence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Every row of a correspondence matrix was masked out.
class UndefinedLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Adversarial training blew up.
class Divergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace baa
