#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace linkfold {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input: structural mechanism errors, schema violations,
/// out-of-contract arguments. `field_path()` is set for schema errors.
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what, std::string field_path = {})
      : Error(field_path.empty() ? what : field_path + ": " + what),
        field_path_(std::move(field_path)) {}
  const std::string& field_path() const noexcept { return field_path_; }

 private:
  std::string field_path_;
};

class VersionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Value outside the operating domain (joint limits, stroke, image size).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// The closure equations have no real solution for the requested input.
class AssemblyError : public Error {
 public:
  AssemblyError(const std::string& what, std::vector<std::string> loop)
      : Error(what), loop_(std::move(loop)) {}
  const std::vector<std::string>& loop() const noexcept { return loop_; }

 private:
  std::vector<std::string> loop_;
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : Error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// Dead-point configuration: the constraint Jacobian is rank deficient.
class SingularityError : public Error {
 public:
  SingularityError(const std::string& what, std::string joint)
      : Error(what), joint_(std::move(joint)) {}
  const std::string& joint() const noexcept { return joint_; }

 private:
  std::string joint_;
};

class GeometryError : public Error {
 public:
  using Error::Error;
};

class VisibilityError : public Error {
 public:
  using Error::Error;
};

class FeatureError : public Error {
 public:
  using Error::Error;
};

class ConditioningError : public Error {
 public:
  using Error::Error;
};

/// A progress callback asked a long computation to stop.
class CancelledError : public Error {
 public:
  using Error::Error;
};

}  // namespace linkfold
