#include "certkit/error.hpp"

namespace certkit {

const char * to_string(ErrorCode code)
{
  switch (code) {
  case ErrorCode::DimensionMismatch: return "DimensionMismatch";
  case ErrorCode::InvalidArgument: return "InvalidArgument";
  case ErrorCode::NegativeRadius: return "NegativeRadius";
  case ErrorCode::NonFiniteState: return "NonFiniteState";
  case ErrorCode::PowerIterationStall: return "PowerIterationStall";
  case ErrorCode::NoConvergence: return "NoConvergence";
  case ErrorCode::InfeasibleFilter: return "InfeasibleFilter";
  case ErrorCode::SqpNoConverge: return "SqpNoConverge";
  case ErrorCode::UnsupportedModel: return "UnsupportedModel";
  case ErrorCode::UnsupportedActivation: return "UnsupportedActivation";
  case ErrorCode::UnboundedRegion: return "UnboundedRegion";
  case ErrorCode::NotFixedPoint: return "NotFixedPoint";
  case ErrorCode::Overflow: return "Overflow";
  case ErrorCode::InsufficientCalibration: return "InsufficientCalibration";
  case ErrorCode::InsufficientData: return "InsufficientData";
  case ErrorCode::CholeskyFail: return "CholeskyFail";
  case ErrorCode::ConfigError: return "ConfigError";
  case ErrorCode::UnknownDemo: return "UnknownDemo";
  case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace certkit
