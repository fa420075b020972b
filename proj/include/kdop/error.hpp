#pragma once

#include <stdexcept>
#include <string>

namespace kdop {

// Error families. The CLI maps these onto exit codes (usage 1, data 2,
// training 3), so every throw site picks the family by what went wrong, not
// by which module raised it.
enum class ErrorKind { usage, data, training };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string tag, const std::string& what)
      : std::runtime_error(what), kind_(kind), tag_(std::move(tag)) {}

  ErrorKind kind() const noexcept { return kind_; }
  // Short machine-readable tag, e.g. "dimension", "parse", "divergence".
  const std::string& tag() const noexcept { return tag_; }

 private:
  ErrorKind kind_;
  std::string tag_;
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& w) : Error(ErrorKind::data, "dimension", w) {}
};
struct DomainError : Error {
  explicit DomainError(const std::string& w) : Error(ErrorKind::data, "domain", w) {}
};
struct ParseError : Error {
  explicit ParseError(const std::string& w) : Error(ErrorKind::data, "parse", w) {}
};
struct DataError : Error {
  explicit DataError(const std::string& w) : Error(ErrorKind::data, "data", w) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorKind::usage, "config", w) {}
};
struct TrainingError : Error {
  explicit TrainingError(const std::string& w) : Error(ErrorKind::training, "training", w) {}
};
struct LeakageError : Error {
  explicit LeakageError(const std::string& w) : Error(ErrorKind::training, "leakage", w) {}
};

}  // namespace kdop
