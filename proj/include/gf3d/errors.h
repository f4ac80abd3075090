#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace gf3d {

// Shape or width mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Out-of-domain argument (count too large, degenerate box, ...).
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// API misuse, e.g. backward() on a non-scalar.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Malformed file. Carries the byte offset at which parsing failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Inconsistent inputs across files (unknown scene id, ...).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace gf3d
