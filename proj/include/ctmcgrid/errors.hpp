#pragma once

#include <stdexcept>
#include <string>

namespace ctmcgrid {

// Malformed or inconsistent user input (files, configs, preconditions on data).
class InputError : public std::runtime_error {
 public:
  explicit InputError(const std::string& what) : std::runtime_error(what) {}
  InputError(const std::string& source, long line, const std::string& what)
      : std::runtime_error(source + ":" + std::to_string(line) + ": " + what),
        line_(line) {}

  long line() const noexcept { return line_; }

 private:
  long line_ = 0;
};

// Failure of a numerical routine (singular system, non-finite predictor).
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace ctmcgrid
