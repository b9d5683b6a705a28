#pragma once

#include <stdexcept>
#include <string>

namespace dernn {

// Base for every error raised by the library. CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidShape : public Error {
 public:
  using Error::Error;
};

class InvalidParameter : public Error {
 public:
  using Error::Error;
};

class InvalidConfig : public Error {
 public:
  using Error::Error;
};

class InvalidOperator : public Error {
 public:
  using Error::Error;
};

// Non-finite values or a degenerate denominator. `stage` is -1 when not inside a recurrence.
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what, int stage = -1) : Error(what), stage_(stage) {}
  int stage() const { return stage_; }

 private:
  int stage_;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class MissingDependency : public Error {
 public:
  using Error::Error;
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, int step) : Error(what), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

}  // namespace dernn
