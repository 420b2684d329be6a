#pragma once

#include <stdexcept>
#include <string>

namespace fhdnn {

/// Tensor or filter dimensions disagree with a layer specification.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A structure violates its own invariants (e.g. a cluster index out of range).
class IntegrityError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Configuration outside the supported ranges.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or truncated binary file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input data cannot satisfy a request (e.g. too few samples for an episode).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fhdnn
