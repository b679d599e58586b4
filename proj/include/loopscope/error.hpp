#pragma once

#include <stdexcept>
#include <string>

namespace loopscope {

// Base for every error the toolkit raises. Subclasses exist so callers (and
// the CLI exit path) can tell bad input apart from broken files.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller passed arguments that violate an operation's preconditions.
class UsageError : public Error {
 public:
  using Error::Error;
};

// A referenced file is missing or unreadable.
class LoadError : public Error {
 public:
  using Error::Error;
};

// A file exists but its contents are malformed or inconsistent.
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// A probability source failed mid-generation.
class GenerationError : public Error {
 public:
  GenerationError(std::size_t step, const std::string& what)
      : Error("generation failed at step " + std::to_string(step) + ": " + what),
        step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace loopscope
