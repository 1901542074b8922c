#pragma once

#include <stdexcept>
#include <string>

namespace qswitch {

/// Base class for every error thrown by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NonPhysicalState : Error { using Error::Error; };
struct NonHermitianInput : Error { using Error::Error; };
struct NonPositiveRate : Error { using Error::Error; };
struct BadWeightMatrix : Error { using Error::Error; };
struct SingularDenominator : Error { using Error::Error; };
struct AssumptionViolation : Error { using Error::Error; };
struct StepTooLarge : Error { using Error::Error; };
struct DomainError : Error { using Error::Error; };
struct WindowOutOfRange : Error { using Error::Error; };

struct ConfigError : Error { using Error::Error; };
struct ParseError : ConfigError { using ConfigError::ConfigError; };
struct ValidationError : ConfigError { using ConfigError::ConfigError; };

}  // namespace qswitch
