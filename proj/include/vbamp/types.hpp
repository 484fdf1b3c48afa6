#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace vbamp {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Measurement structure: one shared matrix (MMV) or one matrix per channel (DCS).
enum class Mode { MMV, DCS };

inline const char* to_string(Mode m) { return m == Mode::MMV ? "mmv" : "dcs"; }

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class UnsupportedError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Thrown when a covariance that must be full rank is not. `which()` names it.
class SingularCovarianceError : public Error {
 public:
  explicit SingularCovarianceError(std::string which)
      : Error("singular covariance: " + which), which_(std::move(which)) {}
  const std::string& which() const { return which_; }

 private:
  std::string which_;
};

}  // namespace vbamp
