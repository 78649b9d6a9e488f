#pragma once

#include <stdexcept>
#include <string>

namespace parareach {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class NotSymmetric : public Error {
 public:
  using Error::Error;
};

/// M_w fails the strict negative-definiteness test.
class NotNegativeDefinite : public Error {
 public:
  using Error::Error;
};

class SingularMw : public Error {
 public:
  using Error::Error;
};

class NonPositiveScale : public Error {
 public:
  using Error::Error;
};

/// The adaptive integrator could not meet its tolerance.
class StepSizeUnderflow : public Error {
 public:
  StepSizeUnderflow(const std::string& what, double last_time)
      : Error(what), last_time_(last_time) {}
  double last_time() const noexcept { return last_time_; }

 private:
  double last_time_;
};

class OutOfDomain : public Error {
 public:
  using Error::Error;
};

class NotOnBoundary : public Error {
 public:
  using Error::Error;
};

/// The seed slab is unbounded (E0 not positive definite).
class UnboundedSlab : public Error {
 public:
  using Error::Error;
};

class RejectionStarvation : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace parareach
