#pragma once

#include <stdexcept>
#include <string>

namespace tjlab {

// All library failures surface as this type so the CLI can map them to a
// diagnostic and a nonzero exit status.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int step) : Error(what), step_(step) {}
  int step() const noexcept { return step_; }

 private:
  int step_;
};

}  // namespace tjlab
