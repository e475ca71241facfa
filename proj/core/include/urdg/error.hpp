#pragma once

#include <stdexcept>
#include <string>

namespace urdg {

/// A configuration or input value violates its contract. `field()` names the
/// offending field so callers (the CLI in particular) can report it.
class ValidationError : public std::invalid_argument {
 public:
  ValidationError(std::string field, const std::string& message)
      : std::invalid_argument(field + ": " + message), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// A file could not be parsed. Line numbers are 1-based; 0 means "whole file".
class FormatError : public std::runtime_error {
 public:
  FormatError(std::size_t line, const std::string& message)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + message : message),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Training produced a non-finite quantity.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(std::string component, const std::string& message)
      : std::runtime_error(component + ": " + message), component_(std::move(component)) {}

  const std::string& component() const noexcept { return component_; }

 private:
  std::string component_;
};

}  // namespace urdg
