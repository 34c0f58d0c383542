#pragma once

#include <stdexcept>
#include <string>

namespace darht {

// Shape or extent mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Model or experiment spec whose pieces do not compose.
class ConstructionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// API misuse: bad argument values, double backward, empty inputs.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A NaN or Inf was produced or supplied.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed file contents (bad magic, truncated data, unknown version).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Checksum mismatch on load.
class CorruptionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A rate whose denominator is zero.
class UndefinedRateError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Experiment configuration rejected before any compute starts.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace darht
