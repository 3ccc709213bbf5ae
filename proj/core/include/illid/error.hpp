#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace illid {

/// Operand shapes do not fit the operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A documented precondition of an operation was violated.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed binary input. Carries the byte offset where parsing stopped.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Invalid run configuration. `pointer()` is the JSON pointer of the offending value.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& pointer, const std::string& what)
      : std::runtime_error(pointer + ": " + what), pointer_(pointer) {}
  const std::string& pointer() const noexcept { return pointer_; }

 private:
  std::string pointer_;
};

/// Training produced a non-finite value.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& term, const std::string& what,
                std::string last_good_checkpoint = {})
      : std::runtime_error(what), term_(term),
        checkpoint_(std::move(last_good_checkpoint)) {}
  const std::string& term() const noexcept { return term_; }
  const std::string& last_good_checkpoint() const noexcept { return checkpoint_; }

 private:
  std::string term_;
  std::string checkpoint_;
};

}  // namespace illid
