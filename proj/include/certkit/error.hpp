#ifndef CERTKIT_ERROR_HPP_
#define CERTKIT_ERROR_HPP_

#include <cstddef>
#include <stdexcept>
#include <string>

#include "certkit/types.hpp"

namespace certkit {

enum class ErrorCode {
  DimensionMismatch,
  InvalidArgument,
  NegativeRadius,
  NonFiniteState,
  PowerIterationStall,
  NoConvergence,
  InfeasibleFilter,
  SqpNoConverge,
  UnsupportedModel,
  UnsupportedActivation,
  UnboundedRegion,
  NotFixedPoint,
  Overflow,
  InsufficientCalibration,
  InsufficientData,
  CholeskyFail,
  ConfigError,
  UnknownDemo,
  Io,
};

const char * to_string(ErrorCode code);

class Error : public std::runtime_error
{
public:
  Error(ErrorCode code, const std::string & what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code)
  {}

  ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

/// Raised by the integrators; `step()` is the index of the first non-finite state.
class NonFiniteStateError : public Error
{
public:
  NonFiniteStateError(std::size_t step, const std::string & what)
      : Error(ErrorCode::NonFiniteState, what + " (step " + std::to_string(step) + ")"), step_(step)
  {}

  std::size_t step() const noexcept { return step_; }

private:
  std::size_t step_;
};

/// Raised by the safety filters when no admissible input exists. Carries the
/// dual ray certificate of the underlying QP when one was produced.
class InfeasibleFilterError : public Error
{
public:
  InfeasibleFilterError(const std::string & what, Vector certificate = {})
      : Error(ErrorCode::InfeasibleFilter, what), certificate_(std::move(certificate))
  {}

  const Vector & certificate() const noexcept { return certificate_; }

private:
  Vector certificate_;
};

inline void require_dim(Eigen::Index got, Eigen::Index want, const char * what)
{
  if (got != want) {
    throw Error(ErrorCode::DimensionMismatch,
      std::string(what) + ": expected " + std::to_string(want) + ", got " + std::to_string(got));
  }
}

}  // namespace certkit

#endif  // CERTKIT_ERROR_HPP_
