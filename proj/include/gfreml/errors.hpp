#pragma once

#include <stdexcept>
#include <string>

namespace gfreml {

// Failure taxonomy. Category drives the CLI exit code: invalid_input -> 2,
// numerical -> 3.
enum class ErrorKind { invalid_input, numerical };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

class InvalidInput : public Error {
 public:
  explicit InvalidInput(const std::string& w)
      : Error(ErrorKind::invalid_input, w) {}
};

class NumericalFailure : public Error {
 public:
  explicit NumericalFailure(const std::string& w)
      : Error(ErrorKind::numerical, w) {}
};

// Input validation.
struct DimensionMismatch : InvalidInput { using InvalidInput::InvalidInput; };
struct InvalidArgument : InvalidInput { using InvalidInput::InvalidInput; };
struct ZeroNormInput : InvalidInput { using InvalidInput::InvalidInput; };
struct AllCoefficientsZero : InvalidInput { using InvalidInput::InvalidInput; };
struct ZeroInitialization : InvalidInput { using InvalidInput::InvalidInput; };
struct ZeroProjectedResponse : InvalidInput { using InvalidInput::InvalidInput; };
struct AllWeightsZero : InvalidInput { using InvalidInput::InvalidInput; };
struct MissingCrossOperator : InvalidInput { using InvalidInput::InvalidInput; };

// Numerical failures.
struct NonSymmetric : NumericalFailure { using NumericalFailure::NumericalFailure; };
struct NotPSD : NumericalFailure { using NumericalFailure::NumericalFailure; };
struct EigenSolverFailure : NumericalFailure { using NumericalFailure::NumericalFailure; };
struct NoUpperBracket : NumericalFailure { using NumericalFailure::NumericalFailure; };
struct Diverged : NumericalFailure { using NumericalFailure::NumericalFailure; };
struct IntegrationFailure : NumericalFailure { using NumericalFailure::NumericalFailure; };

}  // namespace gfreml
