#pragma once

#include <stdexcept>
#include <string>

namespace scenery {

// Precondition on a numeric argument was violated (t <= 0, bad exponent order, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// A configured budget guard would be exceeded.
class ResourceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The discrete spectrum of a grid synthesis has significantly negative entries.
class SynthesisError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operation requires a backend the supplied sampler does not provide.
class UnsupportedBackend : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Quadrature ran out of budget before meeting its tolerance.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double best_estimate, double error_estimate)
      : std::runtime_error(what), best_estimate_(best_estimate), error_estimate_(error_estimate) {}

  double best_estimate() const noexcept { return best_estimate_; }
  double error_estimate() const noexcept { return error_estimate_; }

 private:
  double best_estimate_;
  double error_estimate_;
};

// Reading or writing an output file failed. `path()` names the file.
class IoError : public std::runtime_error {
 public:
  IoError(std::string path, const std::string& message)
      : std::runtime_error(path + ": " + message), path_(std::move(path)) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

// Experiment configuration failed validation. `pointer()` is a JSON pointer to the offending node.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string pointer, const std::string& message)
      : std::runtime_error(pointer + ": " + message), pointer_(std::move(pointer)) {}

  const std::string& pointer() const noexcept { return pointer_; }

 private:
  std::string pointer_;
};

}  // namespace scenery
